# app/ui/utils.py
import pandas as pd
import streamlit as st

from app.core.config import DB_NAME
from app.repository.run_repository import RunRepository
from app.services.prediction_service import LoadedModel, Predictor, load_model


def ensure_runs_loaded() -> pd.DataFrame:
    """
    Initializes the run registry in session state and returns the runs table.
    """
    if 'run_repo' not in st.session_state:
        st.session_state.run_repo = RunRepository(db_path=st.session_state.get('db_path', DB_NAME))
        st.session_state.run_repo.create_tables()
    return st.session_state.run_repo.get_runs()


@st.cache_resource(show_spinner="Chargement du modèle...")
def cached_model(checkpoint_path: str) -> LoadedModel:
    return load_model(checkpoint_path)


def checkpoint_picker(runs: pd.DataFrame, key: str) -> str:
    """Lets the user pick a recorded checkpoint or type a path; returns the path."""
    recorded = [p for p in runs.get('checkpoint_path', pd.Series(dtype=str)).dropna().tolist() if p]
    if recorded:
        choice = st.selectbox("Checkpoint", recorded + ["Autre chemin..."], key=f"{key}_select")
        if choice != "Autre chemin...":
            return choice
    return st.text_input("Chemin du checkpoint", value="model.gfef", key=f"{key}_path")


def get_predictor(checkpoint_path: str) -> Predictor:
    return Predictor(cached_model(checkpoint_path))
