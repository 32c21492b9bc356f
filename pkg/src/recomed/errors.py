"""Exception hierarchy for the recomed package."""

from __future__ import annotations


class RecomedError(Exception):
    """Base class for all errors raised by this package."""


class EmptyCorpusError(RecomedError):
    """No usable prescription records were available."""


class SampleSizeError(RecomedError, ValueError):
    """Requested sample size is outside [1, db.n]."""


class ForeignItemsetError(RecomedError):
    """An itemset references a medicine id not present in the database."""


class StopListError(RecomedError):
    """A stop-list medicine does not exist in the graph being pruned."""


class AtcTableError(RecomedError):
    """The ATC table source contained no valid rows."""


class PartitionCoverageError(RecomedError):
    """A partition does not cover exactly the expected node set."""


class DegeneratePipelineError(RecomedError):
    """Pruning removed every node; nothing is left to cluster."""


class PipelineStageError(RecomedError):
    """A model-build stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class UnknownMedicineError(RecomedError):
    """None of the query medicines exist in the model."""


class CandidateNotInPoolError(RecomedError):
    """An explanation was requested for a candidate the query cannot produce."""


class ModelFormatError(RecomedError):
    """A persisted artifact is malformed or has an unsupported format tag."""
