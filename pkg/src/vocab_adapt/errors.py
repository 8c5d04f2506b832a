"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures without a
lookup table: 1 usage/parameter, 2 data integrity, 3 I/O.
"""


class VocabAdaptError(Exception):
    exit_code = 2


class ParameterError(VocabAdaptError, ValueError):
    exit_code = 1


class TokenizerParseError(VocabAdaptError):
    pass


class IntegrityError(VocabAdaptError):
    pass


class EncodingError(VocabAdaptError):
    pass


class DecodingError(VocabAdaptError):
    pass


class DecompositionError(VocabAdaptError):
    pass


class CapacityError(VocabAdaptError):
    exit_code = 1


class ShapeError(VocabAdaptError):
    pass


class ProvenanceError(VocabAdaptError):
    pass


class DataError(VocabAdaptError):
    pass


class CacheError(VocabAdaptError):
    pass


class PackagingError(VocabAdaptError):
    exit_code = 3


class RowIndexError(VocabAdaptError, IndexError):
    pass
