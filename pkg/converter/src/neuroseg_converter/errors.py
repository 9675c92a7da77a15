class ConverterError(Exception):
    """Base class for converter failures."""


class MissingKey(ConverterError):
    def __init__(self, key: str):
        super().__init__(f"checkpoint is missing required key {key!r}")
        self.key = key


class ShapeConflict(ConverterError):
    pass


class BadMap(ConverterError):
    pass


class UnsupportedTiff(ConverterError):
    pass
