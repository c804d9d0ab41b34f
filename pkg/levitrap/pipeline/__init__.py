# Pipeline Module
# Run ledger, exporters, experiment runner and command line

from .ledger import Base, LedgerManager, RunRecord
from .runner import ExperimentRunner

__all__ = ["ExperimentRunner", "LedgerManager", "RunRecord", "Base"]
