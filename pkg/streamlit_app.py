import streamlit as st
import sys
from pathlib import Path

# Add modules to path
sys.path.append(str(Path(__file__).parent))

from components.session_manager import SessionManager
from components.ui_components import UIComponents


def main():
    """Main application entry point."""
    # Initialize page configuration
    st.set_page_config(
        page_title="KWS Run Browser",
        page_icon="🔊",
        layout="wide"
    )

    session_manager = SessionManager()
    session_manager.initialize_session_state()

    UIComponents.display_header()

    selected_run = UIComponents.handle_sidebar_configuration(session_manager)

    if selected_run is not None and session_manager.get_run_data() is not None:
        UIComponents.display_run(selected_run, session_manager.get_run_data())
    else:
        UIComponents.display_welcome_screen()

    UIComponents.display_status_bar(session_manager)


if __name__ == "__main__":
    main()
