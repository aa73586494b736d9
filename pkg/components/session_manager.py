import streamlit as st
from typing import Dict, Optional


class SessionManager:
    """Manages Streamlit session state for the run browser."""

    @staticmethod
    def initialize_session_state(default_root: str = "checkpoints"):
        """Initialize session state variables."""
        if 'runs_root' not in st.session_state:
            st.session_state.runs_root = default_root
        if 'selected_run' not in st.session_state:
            st.session_state.selected_run = None
        if 'run_data' not in st.session_state:
            st.session_state.run_data = None

    @staticmethod
    def get_runs_root() -> str:
        return st.session_state.get('runs_root', "checkpoints")

    @staticmethod
    def set_runs_root(root: str):
        """Switch the checkpoint root; a different root drops the selected run."""
        if root != st.session_state.get('runs_root'):
            st.session_state.runs_root = root
            SessionManager.clear_selection()

    @staticmethod
    def get_selected_run() -> Optional[str]:
        return st.session_state.get('selected_run')

    @staticmethod
    def select_run(name: str, run_data: Dict):
        """Store the selected run and its loaded tables."""
        st.session_state.selected_run = name
        st.session_state.run_data = run_data

    @staticmethod
    def get_run_data() -> Optional[Dict]:
        return st.session_state.get('run_data')

    @staticmethod
    def needs_reload(name: str) -> bool:
        """Check if the run tables must be loaded for `name`."""
        return st.session_state.get('selected_run') != name or st.session_state.get('run_data') is None

    @staticmethod
    def clear_selection():
        st.session_state.selected_run = None
        st.session_state.run_data = None
