from .experiment import ExperimentSpec, RunReport, TargetRow, select_targets
from .harness_stats import CoverageSummary, HeatBucket, heat_buckets, summarize, union_coverage
