class SurveyGraphError(Exception):
    """Base class for every error raised by the SurveyGraph library"""


class ConfigError(SurveyGraphError):
    """Invalid configuration or command usage"""


class DataError(SurveyGraphError):
    """Input data (codebook, survey, corpus, vectors) cannot be used"""


class CodebookError(DataError):
    pass


class CategoryError(DataError):
    pass


class AgeOutOfRangeError(DataError):
    pass


class MissingFieldError(DataError):
    pass


class HeterogeneousCorpusError(DataError):
    pass


class EmbeddingLookupError(DataError, KeyError):
    pass


class InfeasibleBaseRateError(DataError):
    pass


class StructureError(DataError):
    pass


class InsufficientNeighborsError(DataError, ValueError):
    pass


class UnknownQuestionError(DataError):
    pass


class UnknownRespondentError(DataError):
    pass


class SurveyParseError(DataError):
    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__("line " + str(line_number) + ": " + message)


class MetricsError(SurveyGraphError, ValueError):
    pass


class TrainingError(SurveyGraphError):
    """A training stage could not complete"""


class DivergenceError(TrainingError):
    pass


class FreezeViolationError(TrainingError):
    pass
