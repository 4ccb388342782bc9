"""User-space scheduling middleware for multi-version real-time task sets.

Declare tasks, alternative implementations, accelerators and channels on a
MiddlewareState, pick a mapping/priority policy, then either simulate the
run under virtual time (deterministic, seedable) or execute it on OS
threads.  Both backends share the scheduling core, so a policy explored in
simulation behaves identically when deployed.
"""

from .errors import (
    BackendError,
    ConfigurationError,
    DeclarationError,
    GraphError,
    PhaseError,
    RtschedError,
    SdfDeadlockError,
    SdfInconsistentError,
    SelectionError,
    TableError,
    TraceIntegrityError,
    UsageError,
    ValidationError,
)
from .model import (
    MS,
    US,
    AcceleratorDescriptor,
    BitmaskSelect,
    ClockSource,
    Diagnostic,
    EnergySelect,
    EnergyTimeSelect,
    LockingStrategy,
    MappingScheme,
    MiddlewareState,
    ModeSelect,
    Phase,
    PolicyConfig,
    PriorityAssignment,
    TaskDescriptor,
    TaskKind,
    UserSelect,
    VersionDescriptor,
    VersionSelection,
    WaitingStrategy,
    cleanup,
    hwaccel_decl,
    hwaccel_use,
    init,
    ms,
    start,
    stop,
    task_activate,
    task_decl,
    us,
    version_decl,
)
from .priority import PriorityKey, assign_priority
from .graph import (
    ChannelDescriptor,
    ChannelState,
    ExpansionPlan,
    GraphInfo,
    SdfEdge,
    SdfGraph,
    analyze_graph,
    channel_connect,
    channel_decl,
    channel_pop,
    channel_push,
    check_activation,
    expand_sdf,
    plan_expansion,
    repetition_vector,
    reserve_activation,
    validate_graph,
)
from .versions import (
    AcceleratorRegistry,
    SelectionContext,
    eligible_versions,
    select_version,
)
from .online import Job, SchedulerCore, hyperperiod, scheduler_tick_period
from .offline import ScheduleTable, TableEntry, validate_table
from .tracing import (
    CSV_COLUMNS,
    EVENT_KINDS,
    SCHEDULER_WORKER,
    Overheads,
    RunReport,
    Stat,
    TaskStats,
    TraceEvent,
    compute_overheads,
    read_trace_csv,
    trace_csv_text,
    write_trace_csv,
)
from .simulator import SimJobModel, parse_horizon, policy_label, run_simulation
from .realtime import processor_preflight, run_realtime
from .document import TaskSetDocument, document_from_state, load_document
from .sweep import SWEEP_COLUMNS, SweepSpec, best_policy, make_restrict, run_sweep, write_sweep_csv

__version__ = "0.1.0"

__all__ = [
    "AcceleratorDescriptor",
    "AcceleratorRegistry",
    "BackendError",
    "BitmaskSelect",
    "CSV_COLUMNS",
    "ChannelDescriptor",
    "ChannelState",
    "ClockSource",
    "ConfigurationError",
    "DeclarationError",
    "Diagnostic",
    "EVENT_KINDS",
    "EnergySelect",
    "EnergyTimeSelect",
    "ExpansionPlan",
    "GraphError",
    "GraphInfo",
    "Job",
    "LockingStrategy",
    "MS",
    "MappingScheme",
    "MiddlewareState",
    "ModeSelect",
    "Overheads",
    "Phase",
    "PhaseError",
    "PolicyConfig",
    "PriorityAssignment",
    "PriorityKey",
    "RtschedError",
    "RunReport",
    "SCHEDULER_WORKER",
    "SWEEP_COLUMNS",
    "ScheduleTable",
    "SchedulerCore",
    "SdfDeadlockError",
    "SdfEdge",
    "SdfGraph",
    "SdfInconsistentError",
    "SelectionContext",
    "SelectionError",
    "SimJobModel",
    "Stat",
    "SweepSpec",
    "TableEntry",
    "TableError",
    "TaskDescriptor",
    "TaskKind",
    "TaskSetDocument",
    "TaskStats",
    "TraceEvent",
    "TraceIntegrityError",
    "US",
    "UsageError",
    "UserSelect",
    "ValidationError",
    "VersionDescriptor",
    "VersionSelection",
    "WaitingStrategy",
    "analyze_graph",
    "assign_priority",
    "best_policy",
    "channel_connect",
    "channel_decl",
    "channel_pop",
    "channel_push",
    "check_activation",
    "cleanup",
    "compute_overheads",
    "document_from_state",
    "eligible_versions",
    "expand_sdf",
    "hwaccel_decl",
    "hwaccel_use",
    "hyperperiod",
    "init",
    "load_document",
    "make_restrict",
    "ms",
    "parse_horizon",
    "plan_expansion",
    "policy_label",
    "processor_preflight",
    "read_trace_csv",
    "repetition_vector",
    "reserve_activation",
    "run_realtime",
    "run_simulation",
    "run_sweep",
    "scheduler_tick_period",
    "select_version",
    "start",
    "stop",
    "task_activate",
    "task_decl",
    "trace_csv_text",
    "us",
    "validate_graph",
    "validate_table",
    "version_decl",
    "write_sweep_csv",
    "write_trace_csv",
]
