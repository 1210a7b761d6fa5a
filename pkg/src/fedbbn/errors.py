"""Exception types shared across the simulator."""


class FedBBNError(Exception):
    """Base class for all simulator errors."""


class ShapeMismatch(FedBBNError):
    pass


class DimMismatch(FedBBNError):
    pass


class StructureMismatch(FedBBNError):
    pass


class MissingPseudoLabels(FedBBNError):
    pass


class LabelOutOfRange(FedBBNError):
    pass


class StaleCache(FedBBNError):
    pass


class EmptyBatch(FedBBNError):
    pass


class NonFiniteLoss(FedBBNError):
    """Adaptation diverged; the offending step was rolled back."""


class NoNormLayers(FedBBNError):
    pass


class NonPositiveTemperature(FedBBNError):
    pass


class ClientRoundError(FedBBNError):
    """Wraps a client failure inside a federated round."""

    def __init__(self, client_id: int, cause: BaseException):
        super().__init__(f"client {client_id}: {cause}")
        self.client_id = client_id
        self.cause = cause


class PretrainDiverged(FedBBNError):
    pass


class IndexOutOfRange(FedBBNError):
    pass


class EmptyEvalSet(FedBBNError):
    pass


class AllZero(FedBBNError):
    pass


class DatasetFormatError(FedBBNError):
    """Base for dataset-file parsing failures."""


class BadMagic(DatasetFormatError):
    """Header corruption: wrong magic, version, or payload checksum."""


class ChecksumMismatch(BadMagic):
    pass


class TruncatedFile(DatasetFormatError):
    pass


class ConfigError(FedBBNError):
    """Invalid experiment configuration; carries diagnostics."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)
