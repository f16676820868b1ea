"""Stage planning, deterministic shard sampling, and the end-to-end pipeline."""

from .plans import (
    DEFAULT_ROUND_TOKENS,
    EN_ONLY_SOURCES,
    POOL_EN,
    POOL_SYN,
    POOL_ZH,
    SHARED_SOURCES,
    STAGE1_BUDGET_SHARE,
    STAGE2_BUDGET_SHARE,
    STAGE1_LANGUAGE_RATIOS,
    STAGE2_LANGUAGE_RATIOS,
    TABLE1_VOLUMES,
    Stage,
    StagePlan,
    build_stage_plan,
    default_source_ratios,
    apportion,
)
from .sharding import (
    Shard,
    SamplerState,
    cell_targets,
    pool_of,
    read_shard,
    sample_round,
    split_pools,
    write_shard,
)
from .pipeline import PipelineConfig, RunResult, run_pipeline

__all__ = [
    "DEFAULT_ROUND_TOKENS",
    "EN_ONLY_SOURCES",
    "POOL_EN",
    "POOL_SYN",
    "POOL_ZH",
    "SHARED_SOURCES",
    "STAGE1_BUDGET_SHARE",
    "STAGE2_BUDGET_SHARE",
    "STAGE1_LANGUAGE_RATIOS",
    "STAGE2_LANGUAGE_RATIOS",
    "TABLE1_VOLUMES",
    "Stage",
    "StagePlan",
    "build_stage_plan",
    "default_source_ratios",
    "apportion",
    "Shard",
    "SamplerState",
    "cell_targets",
    "pool_of",
    "read_shard",
    "sample_round",
    "split_pools",
    "write_shard",
    "PipelineConfig",
    "RunResult",
    "run_pipeline",
]
