"""Run configuration files: flat INI sections with a small term grammar.

A configuration looks like::

    [data]
    dataset = soil.csv
    composition = sand, silt, clay

    [model]
    terms = factor(Lithology, ref=1) + random(Year) + s(Elev, k=10)
        + s(Slope, k=10) + te(Lon, Lat, k=10)

    [priors]
    fixed_sd = 10

    [sampler]
    chains = 4
    warmup = 1000
    samples = 1000
    seed = 20100101

    [output]
    directory = out/

The intercept is implicit and always present.  Unknown sections or keys
are hard errors so typos cannot silently change a model.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .hmc import SamplerConfig
from .model import Intercept, Linear, ModelSpec, PriorSpec, RandomIntercept, Smooth, Tensor
from .smooth import SmoothSpec

_KNOWN_KEYS = {
    "data": {"dataset", "composition", "kappa"},
    "model": {"terms", "dimension"},
    "priors": {
        "fixed_sd", "sd_df", "sd_scale", "smooth_sd_df", "smooth_sd_scale",
        "sigma_df", "sigma_scale", "lkj_eta",
    },
    "sampler": {
        "chains", "warmup", "samples", "target_accept", "max_tree_depth", "seed",
    },
    "output": {"directory"},
}

_TERM_CALL = re.compile(r"^(\w+)\((.*)\)$", re.DOTALL)


@dataclass
class RunConfig:
    dataset_path: Path
    composition_cols: list[str]
    kappa: str  # "auto" or a number as text
    terms_text: str
    priors: PriorSpec
    sampler: SamplerConfig
    output_dir: Path
    raw_text: str = field(repr=False, default="")

    def model_spec(self, dimension: int) -> ModelSpec:
        return ModelSpec(
            dimension=dimension,
            terms=parse_terms(self.terms_text),
            priors=self.priors,
        )

    def canonical_text(self) -> str:
        """Config serialized with resolved paths and explicit settings.

        Fit directories store this form so later predict/compare runs do
        not depend on where the original config lived.
        """

        def scale(value):
            return "auto" if value is None else repr(value)

        return (
            "[data]\n"
            f"dataset = {self.dataset_path}\n"
            f"composition = {', '.join(self.composition_cols)}\n"
            f"kappa = {self.kappa}\n\n"
            "[model]\n"
            f"terms = {' + '.join(_split_terms(self.terms_text))}\n\n"
            "[priors]\n"
            f"fixed_sd = {self.priors.fixed_sd!r}\n"
            f"sd_df = {self.priors.sd_df!r}\n"
            f"sd_scale = {scale(self.priors.sd_scale)}\n"
            f"smooth_sd_df = {self.priors.smooth_sd_df!r}\n"
            f"smooth_sd_scale = {scale(self.priors.smooth_sd_scale)}\n"
            f"sigma_df = {self.priors.sigma_df!r}\n"
            f"sigma_scale = {scale(self.priors.sigma_scale)}\n"
            f"lkj_eta = {self.priors.lkj_eta!r}\n\n"
            "[sampler]\n"
            f"chains = {self.sampler.chains}\n"
            f"warmup = {self.sampler.warmup_iterations}\n"
            f"samples = {self.sampler.sampling_iterations}\n"
            f"target_accept = {self.sampler.target_accept!r}\n"
            f"max_tree_depth = {self.sampler.max_tree_depth}\n"
            f"seed = {self.sampler.seed}\n\n"
            "[output]\n"
            f"directory = {self.output_dir}\n"
        )


def _split_terms(text: str) -> list[str]:
    """Split on '+' at parenthesis depth zero."""
    parts, depth, current = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ConfigError("unbalanced parentheses in terms")
        if ch == "+" and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    if depth != 0:
        raise ConfigError("unbalanced parentheses in terms")
    parts.append("".join(current))
    tokens = [p.strip() for p in parts]
    if any(not t for t in tokens):
        raise ConfigError(f"empty term in {text!r}")
    return tokens


def _parse_call_args(body: str) -> tuple[list[str], dict[str, str]]:
    positional, keyword = [], {}
    for piece in body.split(","):
        piece = piece.strip()
        if not piece:
            raise ConfigError(f"empty argument in {body!r}")
        if "=" in piece:
            key, _, value = piece.partition("=")
            keyword[key.strip()] = value.strip()
        else:
            if keyword:
                raise ConfigError("positional argument after keyword argument")
            positional.append(piece)
    return positional, keyword


def _int_arg(kwargs: dict, name: str, default: int | None = None) -> int | None:
    if name not in kwargs:
        return default
    try:
        return int(kwargs.pop(name))
    except ValueError as err:
        raise ConfigError(f"{name} must be an integer") from err


def parse_terms(text: str) -> tuple:
    """Parse a '+'-separated term list into model term objects."""
    terms: list = [Intercept()]
    for token in _split_terms(text):
        call = _TERM_CALL.match(token)
        if call is None:
            if not re.fullmatch(r"[A-Za-z_]\w*", token):
                raise ConfigError(f"cannot parse term {token!r}")
            terms.append(Linear(token))
            continue
        func, body = call.group(1), call.group(2)
        args, kwargs = _parse_call_args(body)
        if func == "factor":
            if len(args) != 1 or set(kwargs) != {"ref"}:
                raise ConfigError("factor takes one covariate and ref=LEVEL")
            terms.append(Linear(args[0], reference=kwargs["ref"]))
        elif func == "random":
            if len(args) != 1 or kwargs:
                raise ConfigError("random takes exactly one grouping factor")
            terms.append(RandomIntercept(args[0]))
        elif func == "s":
            if len(args) != 1:
                raise ConfigError("s takes exactly one covariate")
            k = _int_arg(kwargs, "k", 10)
            degree = _int_arg(kwargs, "degree", 3)
            order = _int_arg(kwargs, "order", 2)
            if kwargs:
                raise ConfigError(f"unknown s() arguments: {sorted(kwargs)}")
            terms.append(
                Smooth(SmoothSpec((args[0],), (k,), degree=degree, penalty_order=order))
            )
        elif func == "te":
            if len(args) != 2:
                raise ConfigError("te takes exactly two covariates")
            k = _int_arg(kwargs, "k", 10)
            k1 = _int_arg(kwargs, "k1", k)
            k2 = _int_arg(kwargs, "k2", k)
            degree = _int_arg(kwargs, "degree", 3)
            order = _int_arg(kwargs, "order", 2)
            if kwargs:
                raise ConfigError(f"unknown te() arguments: {sorted(kwargs)}")
            terms.append(
                Tensor(
                    SmoothSpec(
                        (args[0], args[1]), (k1, k2), degree=degree, penalty_order=order
                    )
                )
            )
        else:
            raise ConfigError(
                f"unknown term function {func!r}; expected factor/random/s/te"
            )
    return tuple(terms)


def _get_float(section, key, default):
    if key not in section:
        return default
    try:
        return float(section[key])
    except ValueError as err:
        raise ConfigError(f"{key} must be a number, got {section[key]!r}") from err


def _get_scale(section, key):
    if key not in section or section[key].strip() == "auto":
        return None
    return _get_float(section, key, None)


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a run configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"cannot parse {path}: {err}") from err

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(parser[section]) - _KNOWN_KEYS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    for required in ("data", "model"):
        if required not in parser:
            raise ConfigError(f"missing required section [{required}]")

    data = parser["data"]
    if "dataset" not in data:
        raise ConfigError("[data] needs a dataset path")
    if "composition" not in data:
        raise ConfigError("[data] needs the composition column names")
    dataset_path = (path.parent / data["dataset"]).resolve()
    if not dataset_path.exists():
        raise ConfigError(f"dataset file {dataset_path} does not exist")
    composition = [c.strip() for c in data["composition"].split(",") if c.strip()]
    if len(composition) < 2:
        raise ConfigError("composition needs at least two column names")
    kappa = data.get("kappa", "auto").strip()
    if kappa != "auto":
        try:
            float(kappa)
        except ValueError as err:
            raise ConfigError("kappa must be 'auto' or a number") from err

    model = parser["model"]
    if "terms" not in model:
        raise ConfigError("[model] needs a terms line")
    parse_terms(model["terms"])  # validate the grammar early

    pri = parser["priors"] if "priors" in parser else {}
    priors = PriorSpec(
        fixed_sd=_get_float(pri, "fixed_sd", 10.0),
        sd_df=_get_float(pri, "sd_df", 3.0),
        sd_scale=_get_scale(pri, "sd_scale"),
        smooth_sd_df=_get_float(pri, "smooth_sd_df", 3.0),
        smooth_sd_scale=_get_scale(pri, "smooth_sd_scale"),
        sigma_df=_get_float(pri, "sigma_df", 3.0),
        sigma_scale=_get_scale(pri, "sigma_scale"),
        lkj_eta=_get_float(pri, "lkj_eta", 1.0),
    )

    smp = parser["sampler"] if "sampler" in parser else {}
    sampler = SamplerConfig(
        chains=int(_get_float(smp, "chains", 4)),
        warmup_iterations=int(_get_float(smp, "warmup", 1000)),
        sampling_iterations=int(_get_float(smp, "samples", 1000)),
        target_accept=_get_float(smp, "target_accept", 0.8),
        max_tree_depth=int(_get_float(smp, "max_tree_depth", 10)),
        seed=int(_get_float(smp, "seed", 0)),
    )

    out = parser["output"] if "output" in parser else {}
    output_dir = (path.parent / out.get("directory", "codagam-out")).resolve()

    return RunConfig(
        dataset_path=dataset_path,
        composition_cols=composition,
        kappa=kappa,
        terms_text=model["terms"],
        priors=priors,
        sampler=sampler,
        output_dir=output_dir,
        raw_text=text,
    )
