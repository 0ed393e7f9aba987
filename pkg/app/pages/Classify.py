# app/pages/Classify.py
import numpy as np
import pandas as pd
import plotly.express as px
import streamlit as st

from app.core.errors import GFEFError
from app.services.dataset_service import generate_strain_dataset
from app.services.feature_service import expert_features, render_curve_image
from app.ui.utils import checkpoint_picker, ensure_runs_loaded, get_predictor

st.set_page_config(
    page_title="Classifier",
    page_icon="🔎",
    layout="wide"
)

st.title("🔎 Classifier une courbe")

runs_df = ensure_runs_loaded()
path = checkpoint_picker(runs_df, key="classify")

try:
    predictor = get_predictor(path)
except GFEFError as exc:
    st.error(f"Impossible de charger le modèle : {exc}")
    st.stop()

loaded = predictor.loaded
st.caption(f"{loaded.num_classes} classes ({', '.join(loaded.class_names)}), longueur {loaded.series_length}")

# --- Series input ---
st.header("Série")
source = st.radio("Source", ["Exemple synthétique", "Saisie"], horizontal=True)
if source == "Exemple synthétique":
    seed = st.number_input("Graine", min_value=0, value=7, step=1)
    example = generate_strain_dataset(1, seed=int(seed))
    index = st.selectbox("Classe", range(example.num_classes), format_func=lambda i: example.class_names[i])
    series = example.instances[index].values
else:
    text = st.text_area("Valeurs (séparées par des virgules ou des espaces)", height=120)
    try:
        series = np.array([float(t) for t in text.replace(",", " ").split()])
    except ValueError:
        st.error("Valeurs non numériques.")
        st.stop()

if series.size == 0:
    st.info("Saisissez une série pour lancer la classification.")
    st.stop()

try:
    prediction = predictor.predict(series)
except GFEFError as exc:
    st.error(str(exc))
    st.stop()

# --- Result ---
col1, col2, col3 = st.columns(3)
col1.metric("Classe prédite", loaded.class_names[prediction.label])
col2.metric("Probabilité", f"{max(prediction.probabilities):.3f}")
scores = {k: v for k, v in prediction.reliability.scores.items() if v is not None}
if scores:
    col3.metric("Type le plus fiable", max(scores, key=scores.get))

col_left, col_right = st.columns(2)
with col_left:
    fig = px.line(x=np.arange(1, series.size + 1), y=series, labels={"x": "t", "y": "valeur"}, title="Courbe")
    st.plotly_chart(fig, use_container_width=True)
    image = render_curve_image(series)
    st.image(image.pixels, caption="Image de la courbe (rouge : dépliée, vert : repliée)", width=256, clamp=True)
with col_right:
    probs = pd.DataFrame({"classe": loaded.class_names, "probabilité": prediction.probabilities})
    st.plotly_chart(px.bar(probs, x="classe", y="probabilité", range_y=[0, 1], title="Probabilités"),
                    use_container_width=True)
    if scores:
        rel = pd.DataFrame({"type": list(scores), "score": list(scores.values())})
        st.plotly_chart(px.bar(rel, x="type", y="score", range_y=[0, 1], title="Scores de fiabilité"),
                        use_container_width=True)

with st.expander("Caractéristiques expertes"):
    st.dataframe(pd.Series(expert_features(series).as_dict(), name="valeur").to_frame(), use_container_width=True)
