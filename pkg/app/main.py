# app/main.py
import streamlit as st

from app.ui.utils import ensure_runs_loaded

st.set_page_config(
    page_title="Accueil - Classification de Jauges",
    page_icon="📡",
    layout="wide"
)

st.title("Classification de l'état des jauges de contrainte")

# --- Registry overview ---
runs_df = ensure_runs_loaded()
col1, col2, col3 = st.columns(3)
col1.metric("Exécutions", len(runs_df))
finished = runs_df.dropna(subset=["accuracy"]) if not runs_df.empty else runs_df
col2.metric("Terminées", len(finished))
col3.metric("Meilleure exactitude", f"{finished['accuracy'].max():.4f}" if not finished.empty else "-")

st.header("Étapes :")
st.markdown("""
1.  **Entraîner** : Lancez `python -m app train --config config.yaml`; chaque exécution est enregistrée dans le registre.
2.  **Exécutions** : La page `📈 Runs` affiche l'historique, les courbes de perte et les métriques de validation.
3.  **Hyperedges** : La page `🕸️ Hyperedges` montre la composition par type (TS / IMG / EXP) des hyperedges appris.
4.  **Classifier** : La page `🔎 Classify` classe une série saisie, affiche son image de courbe et ses scores de fiabilité.
""")

st.caption("Les pages sont accessibles depuis la barre latérale.")
