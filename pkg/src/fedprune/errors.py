"""Exception types shared across the package."""


class FedPruneError(Exception):
    """Base class for all errors raised by fedprune."""


class ContractViolation(FedPruneError, ValueError):
    """An operation was called with arguments outside its contract (shapes, ranges)."""


class NumericOverflowError(FedPruneError, ArithmeticError):
    """An operation produced NaN or Inf."""


class TapeStateError(FedPruneError, RuntimeError):
    """Backward was requested for a value the gradient tape never recorded."""


class ConfigError(FedPruneError, ValueError):
    """Invalid architecture, run or dataset configuration."""


class AggregationError(FedPruneError, ValueError):
    """Client models handed to FedAvg do not share one architecture."""


class ConsistencyError(FedPruneError, RuntimeError):
    """An internal invariant was broken (graph rewiring, frozen architecture)."""


class IngestionError(FedPruneError, IOError):
    """A dataset file is malformed, truncated or inconsistent."""


class LedgerParseError(FedPruneError, ValueError):
    """A metrics ledger file could not be parsed."""
