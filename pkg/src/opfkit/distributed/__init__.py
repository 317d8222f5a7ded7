"""Distributed AC/DC OPF over partitioned networks: ALADIN and ADMM."""
from .partition import (AuxiliaryPair, ConsensusSystem, MergedSolution, PartitionError, PartitionSpec,
                        Region, SplitCentralResult, load_partition, merge_solution,
                        solve_split_centralized, split_network, split_solution)
from .aladin import (AladinConfig, DistributedError, DistributedResult, IterationLog, IterationRecord,
                     aladin_solve, fourteen_bus_config)
from .admm import AdmmConfig, admm_solve, dc_config
