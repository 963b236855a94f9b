"""Exception types shared across the toolkit."""

from __future__ import annotations


class OcsodError(Exception):
    """Base class for every error raised by this package."""


# --- mask serialization -------------------------------------------------


class RleError(OcsodError):
    pass


class SumMismatch(RleError):
    def __init__(self, got: int, expected: int):
        self.got = got
        self.expected = expected
        super().__init__(f"RLE counts sum to {got}, expected {expected}")


class NegativeCount(RleError):
    def __init__(self, count: int):
        self.count = count
        super().__init__(f"RLE count must be >= 0, got {count}")


# --- manifest loading ---------------------------------------------------


class ManifestError(OcsodError):
    """A manifest line failed to load; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ParseError(ManifestError):
    pass


class MaskInvalid(ManifestError):
    pass


class DuplicateId(OcsodError):
    def __init__(self, sample_id: str, line: int | None = None):
        self.sample_id = sample_id
        self.line = line
        at = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate sample_id {sample_id!r}{at}")


# --- geometry -----------------------------------------------------------


class DimensionMismatch(OcsodError):
    pass


class EmptyMask(OcsodError):
    pass


class OutOfBounds(OcsodError):
    pass


# --- metrics ------------------------------------------------------------


class EmptyInput(OcsodError):
    pass


class EmptyGroundTruth(OcsodError):
    pass


# --- model clients ------------------------------------------------------


class ClientError(OcsodError):
    """Base for anything a model backend can do wrong."""


class ModelUnreachable(ClientError):
    """MLLM transport failure (network, HTTP, auth)."""


class Timeout(ModelUnreachable):
    pass


class HttpError(ModelUnreachable):
    def __init__(self, status: int, detail: str = ""):
        self.status = status
        super().__init__(f"HTTP {status}" + (f": {detail}" if detail else ""))


class AuthError(ModelUnreachable):
    pass


class SegmentorUnreachable(ClientError):
    pass


class CountMismatch(ClientError):
    def __init__(self, got: int, expected: int):
        self.got = got
        self.expected = expected
        super().__init__(f"segmentor returned {got} masks for {expected} boxes")


class DecodeError(ClientError):
    pass


class ScriptExhausted(ClientError):
    pass


class NoJsonFound(ClientError):
    pass


class SchemaViolation(ClientError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(detail)


# --- agent loop ---------------------------------------------------------


class MalformedReply(OcsodError):
    """Model reply could not be coerced to the expected schema after retries."""


class NoTargetFound(OcsodError):
    """Model explicitly stated that no object matches the instruction."""


# --- annotation pipeline ------------------------------------------------


class BorderLeak(OcsodError):
    """Generated instruction text mentions the annotation-only red border."""


# --- bench runner -------------------------------------------------------


class MissingPrediction(OcsodError):
    def __init__(self, sample_id: str):
        self.sample_id = sample_id
        super().__init__(f"no prediction found for sample {sample_id!r}")
