"""Exception types shared across the pipeline."""


class StreetMorphError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(StreetMorphError):
    """One or more configuration constraints are violated."""

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


class InputError(StreetMorphError):
    """Input files are missing or malformed."""

    exit_code = 3


class ParseError(InputError):
    """A point-cloud file could not be parsed."""

    def __init__(self, message, *, path=None, line=None, record=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if record is not None:
            where.append(f"record {record}")
        prefix = ": ".join([", ".join(where)]) + ": " if where else ""
        super().__init__(prefix + message)
        self.path = path
        self.line = line
        self.record = record


class MissingArtifactError(InputError):
    """A stage was run before the stage that produces its inputs."""

    def __init__(self, path, stage):
        super().__init__(f"missing artifact {path}; run the '{stage}' stage first")
        self.path = path
        self.stage = stage


class DegenerateGeometryError(StreetMorphError):
    """Geometry is too degenerate for the requested computation."""

    exit_code = 4
