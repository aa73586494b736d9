import streamlit as st
from typing import Dict, Optional

from components.model_counter import DEFAULT_FRAMES, ModelCounter
from components.report_generator import average_accuracy, eval_grid, loss_curves
from utils.errors import KwsError
from utils.run_loader import count_table, discover_runs, load_run, report_downloads


class UIComponents:
    """Handles all UI-related components and displays."""

    @staticmethod
    def display_header():
        """Display the main application header."""
        st.title("Keyword Spotting Run Browser")
        st.markdown("Loss curves, noise-robustness grids and model size of LOVO training runs")

    @staticmethod
    def handle_sidebar_configuration(session_manager) -> Optional[str]:
        """Handle sidebar run selection and return the selected run name."""
        with st.sidebar:
            st.header("Configuration")

            root = st.text_input(
                "📁 Checkpoint root",
                value=session_manager.get_runs_root(),
                help="Directory passed as checkpoint_dir during training",
            )
            session_manager.set_runs_root(root)

            runs = discover_runs(root)
            if not runs:
                st.warning(f"⚠️ No training runs found under {root}")
                session_manager.clear_selection()
                return None

            names = list(runs.keys())
            current = session_manager.get_selected_run()
            selected = st.selectbox(
                "Select run",
                options=names,
                index=names.index(current) if current in names else 0,
                help="Run directories hold a loss log or step_* checkpoints",
            )

            reload_clicked = st.button("Reload run", help="Read the run files again from disk")
            if reload_clicked or session_manager.needs_reload(selected):
                with st.spinner("Loading run..."):
                    session_manager.select_run(selected, load_run(runs[selected]))

            run_data = session_manager.get_run_data()
            if run_data.get('checkpoint') is not None:
                st.success(f"✅ Latest checkpoint: {run_data['checkpoint'].name}")
            return selected

    @staticmethod
    def display_run(name: str, run_data: Dict):
        """Display loss curves, the evaluation grid, model counts and downloads of one run."""
        if run_data.get('error'):
            st.error(f"❌ {run_data['error']}")

        config = run_data.get('config')
        col1, col2, col3 = st.columns(3)
        with col1:
            st.metric("Model", config.model if config else "unknown")
        with col2:
            st.metric("Loss terms", config.loss_terms if config else "unknown")
        with col3:
            loss = run_data.get('loss')
            st.metric("Steps logged", len(loss) if loss is not None else 0)

        st.divider()
        st.header("📉 Training Losses")
        if run_data.get('loss') is not None and len(run_data['loss']):
            curves = loss_curves(run_data['loss'])
            st.line_chart(curves)
            with st.expander("Final losses"):
                st.dataframe(curves.tail(1))
        else:
            st.info("No loss log in this run yet")

        st.divider()
        st.header("🔊 Noise Robustness")
        if run_data.get('eval') is not None:
            st.dataframe(eval_grid(run_data['eval']).style.format("{:.2f}", na_rep="absent"))
            st.metric("Average accuracy", f"{average_accuracy(run_data['eval']):.2f}%")
        else:
            st.info("No evaluation report; run `python kws_cli.py eval` on this run")
        if run_data.get('aggregate') is not None:
            with st.expander("Aggregate over repeats"):
                st.dataframe(run_data['aggregate'])

        if config is not None:
            UIComponents.display_model_counts(config.model, config.num_classes)

        UIComponents.display_downloads(name, run_data)

    @staticmethod
    def display_model_counts(model_name: str, num_classes: int):
        st.divider()
        st.header("🧮 Model Size")
        try:
            report = ModelCounter.report(model_name, DEFAULT_FRAMES, num_classes)
        except KwsError as e:
            st.error(f"❌ {e}")
            return
        st.dataframe(count_table(report))
        st.caption(f"FLOPs for a 1 s clip ({DEFAULT_FRAMES} frames)")

    @staticmethod
    def display_downloads(name: str, run_data: Dict):
        downloads = report_downloads(name, run_data)
        if not downloads:
            return
        st.divider()
        st.header("📥 Downloads")
        columns = st.columns(len(downloads))
        for column, (label, payload, file_name, mime) in zip(columns, downloads):
            with column:
                st.download_button(label, data=payload, file_name=file_name, mime=mime)

    @staticmethod
    def display_welcome_screen():
        """Display welcome screen when no run is selected."""
        st.info("Ready to browse training runs")

        col_info1, col_info2 = st.columns([1, 1])

        with col_info1:
            st.markdown("### How to use:")
            st.markdown("""
            1. **Train** with `python kws_cli.py train run_config/default.conf`
            2. **Evaluate** with `python kws_cli.py eval <run> run_config/default.conf`
            3. **Enter the checkpoint root** in the sidebar
            4. **Select a run** to inspect it
            """)

        with col_info2:
            st.markdown("### Shown per run:")
            st.markdown("• **Loss curves** - L_CE, L_M, L_I, L_O and L_total per step")
            st.markdown("• **Noise grid** - accuracy per noise set and SNR")
            st.markdown("• **Model size** - parameters and FLOPs")
            st.markdown("• **Downloads** - CSV and Excel reports")

    @staticmethod
    def display_status_bar(session_manager):
        """Display status bar at the bottom of the page."""
        st.divider()
        col_status1, col_status2 = st.columns([3, 1])

        with col_status1:
            run_data = session_manager.get_run_data()
            if run_data is None:
                st.info("No run selected")
            elif run_data.get('error'):
                st.error("❌ Run files could not be read completely")
            elif run_data.get('eval') is None:
                st.warning("⚠️ Run not evaluated yet")
            else:
                st.success(f"✅ {session_manager.get_selected_run()} evaluated")

        with col_status2:
            st.markdown("LOVO keyword spotting", help="Training and noise-robustness evaluation toolkit")
