class SpareError(Exception):
    """Base class for every error raised by this package."""


class InvalidPayload(SpareError, ValueError):
    pass


class MalformedPayload(SpareError, ValueError):
    pass


class TokenUndecodable(SpareError, ValueError):
    pass


class TokenUndecryptable(SpareError, ValueError):
    pass


class InvalidKeyMaterial(SpareError, ValueError):
    pass


class ConfigError(SpareError, ValueError):
    pass


class CorruptSnapshot(SpareError, ValueError):
    pass


class InfeasibleSpec(SpareError, ValueError):
    pass


class SchemaError(SpareError, ValueError):
    pass


class StoreEmpty(SpareError, LookupError):
    pass


class SingularDesign(SpareError, ValueError):
    pass
