"""recomed: co-prescription recommendation from historical prescription data."""

from .engine import EngineConfig, build_model, explain, load_model, recommend, save_model
from .errors import RecomedError
from .ingest import TransactionDB, build_transaction_db, parse_prescriptions, sample_transactions

__version__ = "0.1.0"

__all__ = [
    "EngineConfig",
    "RecomedError",
    "TransactionDB",
    "build_model",
    "build_transaction_db",
    "explain",
    "load_model",
    "parse_prescriptions",
    "recommend",
    "sample_transactions",
    "save_model",
    "__version__",
]
