"""Exception types shared across the package, plus the CLI exit-code map."""


class ConsmrfError(Exception):
    """Base class for all library errors."""


class ParseError(ConsmrfError):
    """A triple file line could not be parsed."""

    def __init__(self, path, line_number, message):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = str(path)
        self.line_number = line_number


class EmptyDatasetError(ConsmrfError):
    """A triple file or dataset contained no triples."""


class SplitRejectionError(ConsmrfError):
    """A train/valid/test split left some relation without training triples."""

    def __init__(self, relation_name):
        super().__init__(
            f"relation {relation_name!r} has no training triples after the split; "
            "re-seed the split or merge relations"
        )
        self.relation_name = relation_name


class SaturationError(ConsmrfError):
    """Rejection sampling could not find an unlinked object within the attempt cap."""

    def __init__(self, subject=None, relation=None, attempts=None):
        where = ""
        if subject is not None:
            where = f" for subject {subject}"
        if relation is not None:
            where += f" under relation {relation}"
        tries = f" after {attempts} attempts" if attempts is not None else ""
        super().__init__(f"no unlinked object found{where}{tries}")
        self.subject = subject
        self.relation = relation
        self.attempts = attempts


class DivergenceError(ConsmrfError):
    """Training produced non-finite parameters (typically the penalty is too large)."""

    def __init__(self, round_index=None, detail=""):
        where = f" in round {round_index}" if round_index is not None else ""
        super().__init__(f"non-finite parameters{where}; reduce rho or eta. {detail}".rstrip())
        self.round_index = round_index


# Process exit codes used by the command line interface.
EXIT_OK = 0
EXIT_USAGE = 2          # unknown flag / bad arguments (click default)
EXIT_DATA = 3           # missing file, parse error, empty dataset, split rejection
EXIT_DIVERGENCE = 4
EXIT_SATURATION = 5
