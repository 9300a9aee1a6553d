"""Hyperlink-graph navigation game engine and evaluation harness."""

__version__ = "0.1.0"

from .agents import (  # noqa: F401
    Agent,
    AgentConfigError,
    AgentError,
    AgentReply,
    LlmAgent,
    LlmAgentConfig,
    Observation,
    baseline,
)
from .engine import (  # noqa: F401
    GameConfig,
    GameTrajectory,
    load_trajectories,
    run_episode,
    save_trajectories,
)
from .graphcore import (  # noqa: F401
    UNREACHABLE,
    DistanceCache,
    DistanceField,
    PageGraph,
    build_csr,
    distances_from,
    distances_to,
    largest_scc,
    load_graph,
    out_neighbors,
    save_graph,
)
from .ingest import EdgeListSource, IngestReport, ingest  # noqa: F401
from .metrics import build_report, linear_fit, loop_stats, probe_f1  # noqa: F401
from .tasks import (  # noqa: F401
    EVAL_SPLITS,
    TaskInstance,
    export_training_pairs,
    generate_probe_set,
    generate_split,
    import_pairs,
    load_tasks,
    save_tasks,
)
