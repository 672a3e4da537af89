# util/config.py

from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

from dmd.classical import DEFAULT_TAU
from metrics.errors import CONVERGENCE_THRESHOLD
from util.errors import InvalidInputError, SnapshotIOError

# --- Configuration ---
DEFAULT_OUT_DIR = "results"
DEFAULT_REPEATS = 5
FIELD_CHOICES = ("T", "E", "both")


@dataclass
class RunConfig:
    """Settings of one command-line run, merged from a config file and flags."""
    command: str = ""
    problem: Optional[str] = None
    dims: Optional[Tuple[int, ...]] = None
    dt: Optional[float] = None
    t_end: Optional[float] = None
    stride: Optional[int] = None
    params: List[str] = field(default_factory=list)
    split: str = "odd-even"
    theta: List[float] = field(default_factory=list)
    methods: List[str] = field(default_factory=lambda: ["rkoi"])
    tau: float = DEFAULT_TAU
    ranks: List[int] = field(default_factory=list)
    neighbors: Optional[int] = None
    normalize_axes: bool = False
    init_coeffs: str = "per-parameter"
    init_frame: str = "reduced"
    manifest: Optional[str] = None
    model: Optional[str] = None
    out: str = DEFAULT_OUT_DIR
    threads: Optional[int] = None
    seed: int = 0
    test_limit: Optional[int] = None
    no_solve: bool = False
    state_field: str = "both"
    train_stride: int = 1
    threshold: float = CONVERGENCE_THRESHOLD
    repeats: int = DEFAULT_REPEATS
    ns_values: List[int] = field(default_factory=list)
    strict: bool = False
    verbose: bool = False

    def __post_init__(self):
        if self.state_field not in FIELD_CHOICES:
            raise InvalidInputError(f"--field must be one of {FIELD_CHOICES}, got '{self.state_field}'.")
        if self.train_stride < 1:
            raise InvalidInputError("--train-stride must be at least 1.")
        if self.repeats < 1:
            raise InvalidInputError("--repeats must be at least 1.")
        if any(r < 1 for r in self.ranks):
            raise InvalidInputError(f"Ranks must be positive, got {self.ranks}.")

    def grid_overrides(self) -> Dict[str, Any]:
        return dict(dims=self.dims, dt=self.dt, t_end=self.t_end, snapshot_stride=self.stride)

    @property
    def rank(self) -> Optional[int]:
        """The single rank a train/predict run uses (energy criterion when unset)."""
        return self.ranks[0] if self.ranks else None


# --- Value parsers ---

def _split_tokens(text: str) -> List[str]:
    return [token for token in text.replace(",", " ").split() if token]


def parse_int_list(text: str) -> List[int]:
    """'2,4,6', '2 4 6' or the inclusive range '2:10' / '2:10:2'."""
    values = []
    for token in _split_tokens(text):
        if ":" in token:
            parts = [int(p) for p in token.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError(f"bad range '{token}'")
            step = parts[2] if len(parts) == 3 else 1
            values.extend(range(parts[0], parts[1] + 1, step))
        else:
            values.append(int(token))
    return values


def parse_float_list(text: str) -> List[float]:
    return [float(token) for token in _split_tokens(text)]


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: '{text}'")


_PARSERS = {
    "dims": lambda text: tuple(parse_int_list(text)),
    "dt": float,
    "t_end": float,
    "stride": int,
    "params": _split_tokens,
    "theta": parse_float_list,
    "methods": _split_tokens,
    "tau": float,
    "ranks": parse_int_list,
    "neighbors": int,
    "normalize_axes": parse_bool,
    "threads": int,
    "seed": int,
    "test_limit": int,
    "no_solve": parse_bool,
    "train_stride": int,
    "threshold": float,
    "repeats": int,
    "ns_values": parse_int_list,
    "strict": parse_bool,
    "verbose": parse_bool,
}

# Config-file keys follow the long flag names.
_ALIASES = {"field": "state_field", "method": "methods", "rank": "ranks", "param": "params", "ns": "ns_values", "J": "neighbors"}


def _normalize_key(key: str) -> str:
    key = key.strip()
    key = _ALIASES.get(key, key)
    key = key.replace("-", "_")
    return _ALIASES.get(key, key)


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """Parses 'key = value' lines; '#' starts a comment."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise InvalidInputError(f"{source}:{number}: expected 'key = value', got '{line}'.")
        name = _normalize_key(key)
        if name not in known or name == "command":
            raise InvalidInputError(f"{source}:{number}: unknown setting '{key.strip()}'.")
        try:
            values[name] = _PARSERS.get(name, str.strip)(raw.strip())
        except ValueError as e:
            raise InvalidInputError(f"{source}:{number}: bad value for '{key.strip()}': {e}") from e
    return values


def read_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise SnapshotIOError(f"Could not read config file '{path}': {e}", path) from e
    return parse_config_text(text, source=path)


def build_config(command: str, flags: Dict[str, Any], config_path: Optional[str] = None) -> RunConfig:
    """File settings overlaid by every flag that was given (not None)."""
    values = read_config_file(config_path) if config_path else {}
    known = {f.name for f in fields(RunConfig)}
    values.update({k: v for k, v in flags.items() if k in known and v is not None})
    values["command"] = command
    return RunConfig(**values)
