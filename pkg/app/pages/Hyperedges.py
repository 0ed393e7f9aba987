# app/pages/Hyperedges.py
import numpy as np
import plotly.express as px
import streamlit as st

from app.core.errors import GFEFError
from app.core.models import Dataset, TimeSeriesInstance
from app.services.dataset_service import generate_strain_dataset
from app.services.diagnostics_service import DiagnosticsService
from app.ui.membership_grid import display_membership_grid
from app.ui.utils import cached_model, checkpoint_picker, ensure_runs_loaded

st.set_page_config(
    page_title="Hyperedges",
    page_icon="🕸️",
    layout="wide"
)

st.title("🕸️ Composition des hyperedges")

runs_df = ensure_runs_loaded()
path = checkpoint_picker(runs_df, key="hyperedges")

try:
    loaded = cached_model(path)
except GFEFError as exc:
    st.error(f"Impossible de charger le modèle : {exc}")
    st.stop()

config = loaded.config
if config.model.architecture != "gfef" or config.features.fusion != "hypergraph":
    st.warning("Ce modèle n'utilise pas de fusion par hypergraphe.")
    st.stop()

# --- Capture the learned structures on a synthetic sample batch ---
sample_batch = generate_strain_dataset(8, seed=0)
if sample_batch.series_length != loaded.series_length:
    st.info("Longueur de série différente du jeu synthétique : sonde remplacée par des séries nulles.")
    sample_batch = Dataset([TimeSeriesInstance(np.zeros(loaded.series_length), 0)], loaded.num_classes, "zeros")

service = DiagnosticsService()
output = service.capture(loaded, sample_batch)
tags = config.features.active_types()
nodes = config.model.nodes_per_type

stage = st.radio("Structure", ["Première étape", "Dynamique"], horizontal=True)
structure = output.structure if stage == "Première étape" else output.dynamic_structure
composition = service.hyperedge_composition(structure, tags, nodes)

# --- Family averages ---
st.header("Proportions moyennes par famille d'ancre")
families = service.composition_by_family(composition).reset_index()
long_df = families.melt(id_vars="anchor_type", var_name="type", value_name="proportion")
fig = px.bar(long_df, x="anchor_type", y="proportion", color="type", barmode="stack",
             title="Part de chaque type dans les hyperedges")
st.plotly_chart(fig, use_container_width=True)

# --- Node attention ---
attention = service.attention_frame(output, tags, nodes)
if not attention.empty:
    fig = px.bar(attention, x="node", y="attention", color="type", title="Attention moyenne des nœuds")
    st.plotly_chart(fig, use_container_width=True)

st.markdown("---")

# --- Membership grid ---
st.header("Hyperedges")
selected = display_membership_grid(composition, key="membership_grid")
if selected is not None:
    members = structure.hyperedges[selected]
    st.write(f"Hyperedge {selected} : {len(members)} nœuds")
    st.code(", ".join(f"{m} ({tags[m // nodes]})" for m in members))

st.download_button(
    "Télécharger la table (TSV)",
    composition.to_csv(sep="\t", index=False),
    file_name="hyperedges.tsv",
)
