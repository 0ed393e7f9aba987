# app/pages/Runs.py
import plotly.express as px
import streamlit as st

from app.ui.utils import ensure_runs_loaded

st.set_page_config(
    page_title="Exécutions",
    page_icon="📈",
    layout="wide"
)

st.title("📈 Exécutions d'entraînement")

runs_df = ensure_runs_loaded()

if runs_df.empty:
    st.warning("Aucune exécution enregistrée. Lancez d'abord `python -m app train`.")
    st.stop()

# --- Runs table ---
st.header("Registre")
st.dataframe(
    runs_df.style.format({"accuracy": "{:.4f}", "f1": "{:.4f}", "precision": "{:.4f}"}, na_rep="-"),
    use_container_width=True
)

# --- Summary across seeds ---
finished = runs_df.dropna(subset=["accuracy"])
if not finished.empty:
    st.header("Moyenne par jeu de données et architecture")
    summary = finished.groupby(["dataset", "architecture"])[["accuracy", "f1", "precision"]].agg(["mean", "std"])
    st.dataframe(summary, use_container_width=True)

st.markdown("---")

# --- Epoch curves ---
st.header("Courbes par époque")
run_id = st.selectbox(
    "Exécution",
    runs_df["id"].tolist(),
    format_func=lambda i: f"#{i} - {runs_df.set_index('id').loc[i, 'dataset']} (seed {runs_df.set_index('id').loc[i, 'seed']})",
)
epochs_df = st.session_state.run_repo.get_epochs(int(run_id))

if epochs_df.empty:
    st.info("Pas encore d'époque enregistrée pour cette exécution.")
    st.stop()

col1, col2 = st.columns(2)
with col1:
    losses = epochs_df.melt(
        id_vars="epoch",
        value_vars=["total", "ce_final", "ce_ts", "ce_img", "ce_exp", "js_total"],
        var_name="terme",
        value_name="perte",
    )
    fig = px.line(losses, x="epoch", y="perte", color="terme", title="Pertes")
    st.plotly_chart(fig, use_container_width=True)
with col2:
    accuracy = epochs_df.melt(
        id_vars="epoch",
        value_vars=[c for c in ["train_accuracy", "val_accuracy", "val_f1"] if c in epochs_df.columns],
        var_name="métrique",
        value_name="valeur",
    ).dropna()
    fig = px.line(accuracy, x="epoch", y="valeur", color="métrique", title="Précision", range_y=[0, 1])
    st.plotly_chart(fig, use_container_width=True)

with st.expander("Configuration de l'exécution"):
    st.json(st.session_state.run_repo.get_config(int(run_id)))
