from .baselines import OpenHashMap
from .keyset import KeysetError, KeysetSpec, generate_keys, generate_keyset, load_keyset
from .workload import RunReport, WorkloadError, WorkloadSpec, run_workload

__all__ = ["OpenHashMap", "KeysetError", "KeysetSpec", "generate_keys", "generate_keyset",
           "load_keyset", "RunReport", "WorkloadError", "WorkloadSpec", "run_workload"]
