"""benchforge: benchmark-suite orchestration, scoring, and design analysis."""

__version__ = "0.1.0"

from .aggregate import (
    BenchResult,
    RatioRow,
    SuiteScore,
    fold_bench,
    fold_outcomes,
    fold_process,
    ratio_to_baseline,
    suite_score,
)
from .design import (
    ClassMetrics,
    CoverageReport,
    MLCMatrix,
    coverage_proportions,
    mlcm_build,
    mlcm_metrics,
)
from .executor import DevicePool, ProcessOutcome, ProcessPlan, RunRecord, plan_launches, supervise
from .protocol import (
    MetricEvent,
    Observation,
    ObservationLog,
    Rejection,
    StreamDecoder,
    decode_event,
    encode_event,
    read_stream,
)
from .report import ReportDocument, render_csv, render_json, render_report, render_text
from .suite import (
    BenchmarkSpec,
    CoverageTargets,
    SuiteConfig,
    TaxonomyTags,
    parse_suite,
    render_suite,
    select_benchmarks,
    validate_suite,
)

# benchforge.worker is deliberately not imported here: it doubles as the
# `python -m benchforge.worker` entry point and must stay import-clean.

__all__ = [
    "BenchResult",
    "BenchmarkSpec",
    "ClassMetrics",
    "CoverageReport",
    "CoverageTargets",
    "DevicePool",
    "MLCMatrix",
    "MetricEvent",
    "Observation",
    "ObservationLog",
    "ProcessOutcome",
    "ProcessPlan",
    "RatioRow",
    "Rejection",
    "ReportDocument",
    "RunRecord",
    "StreamDecoder",
    "SuiteConfig",
    "SuiteScore",
    "TaxonomyTags",
    "coverage_proportions",
    "decode_event",
    "encode_event",
    "fold_bench",
    "fold_outcomes",
    "fold_process",
    "mlcm_build",
    "mlcm_metrics",
    "parse_suite",
    "plan_launches",
    "ratio_to_baseline",
    "read_stream",
    "render_csv",
    "render_json",
    "render_report",
    "render_suite",
    "render_text",
    "select_benchmarks",
    "suite_score",
    "supervise",
    "validate_suite",
]
