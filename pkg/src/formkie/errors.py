class FormKieError(Exception):
    """Base class for every error raised by formkie."""


class SchemaError(FormKieError):
    """Input file does not match the expected JSON layout."""


class DimensionMismatch(FormKieError):
    pass
