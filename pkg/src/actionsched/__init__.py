"""Action-level elastic resource scheduling library and cluster simulator."""

from .dp import (
    AllocationResult,
    BasicOperator,
    DpOperator,
    DpTask,
    FlatDpTable,
    basic_operator,
    brute_force_arrange,
    dp_arrange,
    dp_task,
)
from .gputopo import (
    Chunk,
    ChunkCounts,
    GpuDpOperator,
    chunk_allocate,
    chunk_free,
    decode_state,
    encode_state,
    gpu_prev,
)
from .managers import (
    BasicManager,
    CpuManager,
    GpuManager,
    Placement,
    ResourceManager,
    build_manager,
)
from .model import (
    Action,
    AllocationDomainError,
    AllocationUnavailable,
    ClusterSpec,
    ConsistencyError,
    CostVector,
    CpuNodeSpec,
    ElasticityProfile,
    InfeasibleError,
    ModelIncompleteError,
    ResourceSpec,
    SchedulingError,
    ServiceSpec,
    StateDomainError,
    UnitSpec,
    eval_duration,
    from_usec,
    to_usec,
    validate_action,
)
from .scheduler import (
    HistoricalStats,
    PlannedAction,
    ScheduleDecision,
    approx_objective,
    estimate,
    schedule,
)
from .sim import (
    DedicatedServices,
    ElasticActionLevel,
    Engine,
    FixedDoP,
    SimRecord,
    TrajectoryStatic,
    make_policy,
    run,
    summarize,
)
from .trace import (
    ActSeg,
    GenParams,
    ThinkSeg,
    TraceError,
    TrajectoryRec,
    gen_trace,
    measure_active_ratio,
    read_trace,
    write_trace,
)

__version__ = "0.1.0"
