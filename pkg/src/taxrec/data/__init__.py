"""Data ingestion, checkpoints and the synthetic corpus generator."""

from .transactions import (
    TransactionLog,
    load_dataset,
    load_transactions,
    read_transaction_lines,
    write_transactions,
)

__all__ = [
    "TransactionLog",
    "load_dataset",
    "load_transactions",
    "read_transaction_lines",
    "write_transactions",
]
