# app/ui/membership_grid.py
from typing import Optional

import pandas as pd
import streamlit as st
from st_aggrid import AgGrid, DataReturnMode, GridOptionsBuilder, GridUpdateMode, JsCode

TYPE_COLUMNS = ['ts', 'img', 'exp']


def display_membership_grid(df: pd.DataFrame, key: str = "membership_grid") -> Optional[int]:
    """
    Displays a hyperedge composition table in a filterable, read-only AgGrid.

    Proportion cells are shaded by their value; a single row can be selected.

    Args:
        df (pd.DataFrame): One row per hyperedge (see DiagnosticsService.hyperedge_composition).
        key (str): A unique key for the AgGrid component.

    Returns:
        Optional[int]: The selected hyperedge index, if any.
    """
    if df.empty:
        st.info("Aucun hyperedge à afficher.")
        return None

    # --- Column Selector ---
    all_columns = [col for col in df.columns if col != 'hyperedge']
    if 'membership_columns' not in st.session_state:
        st.session_state.membership_columns = ['anchor_type', 'size'] + TYPE_COLUMNS

    with st.expander("Gérer les colonnes visibles"):
        st.session_state.membership_columns = st.multiselect(
            "Choisir les colonnes à afficher",
            all_columns,
            default=[col for col in st.session_state.membership_columns if col in all_columns],
            key=f"{key}_multiselect"
        )
    cols_to_display = [col for col in st.session_state.membership_columns if col in df.columns]
    grid_df = df[['hyperedge'] + cols_to_display]

    # --- Grid Configuration ---
    shade_js = JsCode("""
        function(params) {
            const alpha = Math.min(Math.max(params.value || 0, 0), 1);
            return { backgroundColor: 'rgba(31, 119, 180,' + (0.15 + 0.6 * alpha) + ')' };
        }
    """)
    gb = GridOptionsBuilder.from_dataframe(grid_df)
    for col in TYPE_COLUMNS:
        if col in grid_df.columns:
            gb.configure_column(col, type=["numericColumn"], precision=3, cellStyle=shade_js)
    gb.configure_column("anchor_type", filter="agSetColumnFilter")
    gb.configure_default_column(resizable=True, sortable=True, filter=True, editable=False)
    gb.configure_selection("single")
    grid_options = gb.build()

    # --- Display Grid ---
    grid_response = AgGrid(
        grid_df,
        gridOptions=grid_options,
        data_return_mode=DataReturnMode.FILTERED_AND_SORTED,
        update_mode=GridUpdateMode.SELECTION_CHANGED,
        fit_columns_on_grid_load=True,
        height=420,
        width='100%',
        key=key,
        allow_unsafe_jscode=True
    )

    selected = grid_response.get('selected_rows')
    if selected is None or len(selected) == 0:
        return None
    # Newer st_aggrid versions return a DataFrame, older ones a list of dicts.
    row = selected.iloc[0] if isinstance(selected, pd.DataFrame) else selected[0]
    return int(row['hyperedge'])
