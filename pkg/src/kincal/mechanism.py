"""Chemical mechanism data model and file parser.

A mechanism file is a line-oriented UTF-8 text file with three sections:

    [species]
    H2  M=2.01588  elems=H:2  thermo=H2

    [thermo]
    H2  t_low=200 t_mid=1000 t_high=3500  low=a1,...,a7  high=a1,...,a7

    [reactions]
    R1: H + O2 = O + OH | A=1.04e14 beta=0 Ea=15286
    R5: H2 + M = 2 H + M | A=4.577e19 beta=-1.4 Ea=104380 tb: H2:2.5,H2O:12,Ar:0,He:0
    R9: H + O2 (+M) = HO2 (+M) | A=4.65084e12 beta=0.44 Ea=0 \
        falloff: Alow=6.366e20 betalow=-1.72 Ealow=524.8 troe_fc=0.5 tb: H2:2,...

An optional ``[options]`` section may set ``default_bath=<species>``.
Repeated reaction ids with identical stoichiometry are grouped into a single
reaction whose total rate is the sum over its Arrhenius lines (the ``dup``
token marks the extra lines).  Serialization writes every number with 17
significant digits so that serialize/parse round-trips are value-exact.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

from .constants import ATOMIC_MASSES


class MechanismError(ValueError):
    """Raised for syntax or consistency errors in a mechanism file."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Arrhenius:
    """Modified Arrhenius parameters: k = A * T**beta * exp(-Ea / (R*T)).

    A is in CGS mol-cm-s-K units, Ea in cal/mol.
    """

    A: float
    beta: float
    Ea: float


@dataclass(frozen=True)
class NasaPoly7:
    """Two-branch NASA-7 polynomial for cp/R, h/RT and s/R."""

    t_low: float
    t_mid: float
    t_high: float
    coeffs_low: tuple
    coeffs_high: tuple

    def branch(self, T):
        return self.coeffs_low if T < self.t_mid else self.coeffs_high


@dataclass(frozen=True)
class ThermoProps:
    cp_R: float
    h_RT: float
    s_R: float


@dataclass(frozen=True)
class Species:
    name: str
    molar_mass: float
    element_composition: dict
    thermo: NasaPoly7

    def __post_init__(self):
        if self.molar_mass <= 0:
            raise MechanismError(f"species {self.name}: molar mass must be positive")
        if not any(n > 0 for n in self.element_composition.values()):
            raise MechanismError(f"species {self.name}: empty element composition")
        if any(n < 0 for n in self.element_composition.values()):
            raise MechanismError(f"species {self.name}: negative element count")


ELEMENTARY = "elementary"
THIRD_BODY = "third_body"
FALLOFF = "falloff"


@dataclass(frozen=True)
class RateModel:
    """Rate law of one reaction: plain Arrhenius, third-body enhanced, or
    TROE falloff between a low- and a high-pressure Arrhenius limit."""

    arrhenius: Arrhenius
    kind: str = ELEMENTARY
    efficiencies: dict = field(default_factory=dict)
    low: Arrhenius | None = None
    troe_fc: float | None = None

    def __post_init__(self):
        if self.arrhenius.A <= 0:
            raise MechanismError("non-positive pre-exponential factor")
        if any(e < 0 for e in self.efficiencies.values()):
            raise MechanismError("negative third-body efficiency")
        if self.kind == FALLOFF:
            if self.low is None or self.troe_fc is None:
                raise MechanismError("falloff reaction needs a low-pressure limit and troe_fc")
            if self.low.A <= 0:
                raise MechanismError("non-positive low-pressure pre-exponential factor")
            if not 0.0 < self.troe_fc <= 1.0:
                raise MechanismError(f"troe_fc must be in (0, 1], got {self.troe_fc}")


@dataclass(frozen=True)
class Reaction:
    rid: str
    reactants: dict
    products: dict
    rate: RateModel
    reversible: bool = True
    duplicates: tuple = ()  # extra Arrhenius lines sharing this stoichiometry

    @property
    def arrhenius_lines(self):
        """All Arrhenius parameter sets; the total rate is their sum."""
        return (self.rate.arrhenius,) + tuple(self.duplicates)

    def net_stoichiometry(self):
        net = {}
        for sp, nu in self.products.items():
            net[sp] = net.get(sp, 0) + nu
        for sp, nu in self.reactants.items():
            net[sp] = net.get(sp, 0) - nu
        return net


@dataclass(frozen=True)
class Mechanism:
    species: tuple
    reactions: tuple
    default_bath: str | None = None

    def species_index(self, name):
        try:
            return self._index()[name]
        except KeyError:
            raise MechanismError(f"unknown species {name!r}") from None

    def _index(self):
        # frozen dataclass: cache on the instance via object.__setattr__
        idx = getattr(self, "_species_index", None)
        if idx is None:
            idx = {sp.name: i for i, sp in enumerate(self.species)}
            object.__setattr__(self, "_species_index", idx)
        return idx

    def find_species(self, name):
        return self.species[self.species_index(name)]

    def find_reaction(self, rid):
        for rxn in self.reactions:
            if rxn.rid == rid:
                return rxn
        raise MechanismError(f"unknown reaction {rid!r}")

    def molar_masses(self):
        return [sp.molar_mass for sp in self.species]


def thermo_props(species, T):
    """Evaluate cp/R, h/RT and s/R of one species at temperature T (K)."""
    poly = species.thermo
    if not poly.t_low <= T <= poly.t_high:
        raise MechanismError(
            f"T={T} K outside thermo range [{poly.t_low}, {poly.t_high}] of {species.name}"
        )
    a = poly.branch(T)
    cp_R = a[0] + T * (a[1] + T * (a[2] + T * (a[3] + T * a[4])))
    h_RT = (
        a[0]
        + T * (a[1] / 2 + T * (a[2] / 3 + T * (a[3] / 4 + T * a[4] / 5)))
        + a[5] / T
    )
    s_R = (
        a[0] * math.log(T)
        + T * (a[1] + T * (a[2] / 2 + T * (a[3] / 3 + T * a[4] / 4)))
        + a[6]
    )
    return ThermoProps(cp_R=cp_R, h_RT=h_RT, s_R=s_R)


def element_matrix(mech):
    """Element-count matrix (elements x species).

    Returns (element_names, matrix) with matrix[e][s] the count of element e
    in species s.  Rows are sorted by element name.
    """
    elements = sorted({e for sp in mech.species for e in sp.element_composition})
    matrix = [
        [sp.element_composition.get(e, 0) for sp in mech.species] for e in elements
    ]
    return elements, matrix


# ---------------------------------------------------------------------------
# parsing

_SECTION_RE = re.compile(r"^\[(\w+)\]$")


def _strip(line):
    return line.split("#", 1)[0].strip()


def _parse_float(token, what, lineno):
    try:
        return float(token)
    except ValueError:
        raise MechanismError(f"bad numeric value {token!r} for {what}", line=lineno) from None


def _parse_kv_pairs(text, lineno):
    """Parse 'H2:2.5,H2O:12' into an ordered dict of floats."""
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" not in item:
            raise MechanismError(f"expected name:value, got {item!r}", line=lineno)
        name, val = item.split(":", 1)
        out[name.strip()] = _parse_float(val, name, lineno)
    return out


def _parse_side(text, lineno):
    """Parse one side of a reaction equation into (stoich map, has_M, has_falloff_M)."""
    has_m = False
    falloff_m = False
    text = text.strip()
    if "(+M)" in text:
        falloff_m = True
        text = text.replace("(+M)", " ").strip()
        text = text.rstrip("+").strip()
    stoich = {}
    for term in text.split("+"):
        term = term.strip()
        if not term:
            raise MechanismError("empty term in reaction equation", line=lineno)
        m = re.match(r"^(\d+)\s+(\S+)$", term)
        if m:
            nu, name = int(m.group(1)), m.group(2)
        else:
            nu, name = 1, term
        if name == "M":
            has_m = True
            continue
        stoich[name] = stoich.get(name, 0) + nu
    return stoich, has_m, falloff_m


def _parse_reaction_line(line, lineno):
    if ":" not in line:
        raise MechanismError("reaction line needs 'id: equation | params'", line=lineno)
    rid, rest = line.split(":", 1)
    rid = rid.strip()
    if "|" not in rest:
        raise MechanismError("reaction line needs '|' before rate parameters", line=lineno,
                             column=line.find(":") + 1)
    eqn, params = rest.split("|", 1)

    if "=>" in eqn:
        lhs, rhs = eqn.split("=>", 1)
        reversible = False
    elif "=" in eqn:
        lhs, rhs = eqn.split("=", 1)
        reversible = True
    else:
        raise MechanismError("reaction equation needs '=' or '=>'", line=lineno)
    reactants, lm, lf = _parse_side(lhs, lineno)
    products, rm, rf = _parse_side(rhs, lineno)
    if lm != rm or lf != rf:
        raise MechanismError("third-body 'M' must appear on both sides", line=lineno)

    tokens = params.split()
    kv = {}
    flags = set()
    tb_text = None
    falloff_kv = {}
    i = 0
    in_falloff = False
    while i < len(tokens):
        tok = tokens[i]
        if tok == "dup":
            flags.add("dup")
            in_falloff = False
        elif tok == "tb:":
            i += 1
            if i >= len(tokens):
                raise MechanismError("tb: needs an efficiency list", line=lineno)
            tb_text = tokens[i]
            in_falloff = False
        elif tok.startswith("tb:"):
            tb_text = tok[3:]
            in_falloff = False
        elif tok == "falloff:":
            in_falloff = True
        elif "=" in tok:
            key, val = tok.split("=", 1)
            (falloff_kv if in_falloff else kv)[key] = _parse_float(val, key, lineno)
        else:
            raise MechanismError(f"unexpected token {tok!r}", line=lineno)
        i += 1

    for key in ("A", "beta", "Ea"):
        if key not in kv:
            raise MechanismError(f"missing rate parameter {key}", line=lineno)
    arr = Arrhenius(A=kv["A"], beta=kv["beta"], Ea=kv["Ea"])

    efficiencies = _parse_kv_pairs(tb_text, lineno) if tb_text is not None else {}

    if lf:
        for key in ("Alow", "betalow", "Ealow", "troe_fc"):
            if key not in falloff_kv:
                raise MechanismError(f"falloff reaction missing {key}", line=lineno)
        rate = RateModel(
            arrhenius=arr,
            kind=FALLOFF,
            efficiencies=efficiencies,
            low=Arrhenius(A=falloff_kv["Alow"], beta=falloff_kv["betalow"],
                          Ea=falloff_kv["Ealow"]),
            troe_fc=falloff_kv["troe_fc"],
        )
    elif lm:
        rate = RateModel(arrhenius=arr, kind=THIRD_BODY, efficiencies=efficiencies)
    else:
        if tb_text is not None:
            raise MechanismError("tb: efficiencies given but no M in the equation", line=lineno)
        rate = RateModel(arrhenius=arr)

    return rid, reactants, products, rate, reversible, "dup" in flags


def parse_mechanism(text):
    """Parse a mechanism file into an immutable Mechanism.

    Raises MechanismError (with the offending line number) on syntax errors,
    unknown species, element imbalance, or non-positive pre-exponentials.
    """
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1)
            sections.setdefault(current, [])
            continue
        if current is None:
            raise MechanismError(f"content before any [section]: {line!r}", line=lineno)
        sections[current].append((lineno, line))

    known = {"species", "thermo", "reactions", "options"}
    for name in sections:
        if name not in known:
            raise MechanismError(f"unknown section [{name}]")

    # thermo first, keyed rows
    thermo = {}
    for lineno, line in sections.get("thermo", []):
        parts = line.split()
        key = parts[0]
        kv = {}
        for tok in parts[1:]:
            if "=" not in tok:
                raise MechanismError(f"unexpected token {tok!r} in thermo row", line=lineno)
            k, v = tok.split("=", 1)
            kv[k] = v
        try:
            t_low = float(kv["t_low"])
            t_mid = float(kv["t_mid"])
            t_high = float(kv["t_high"])
            low = tuple(float(x) for x in kv["low"].split(","))
            high = tuple(float(x) for x in kv["high"].split(","))
        except KeyError as exc:
            raise MechanismError(f"thermo row {key}: missing {exc}", line=lineno) from None
        if len(low) != 7 or len(high) != 7:
            raise MechanismError(f"thermo row {key}: need 7 coefficients per branch",
                                 line=lineno)
        if not t_low < t_mid < t_high:
            raise MechanismError(f"thermo row {key}: require t_low < t_mid < t_high",
                                 line=lineno)
        poly = NasaPoly7(t_low, t_mid, t_high, low, high)
        _check_cp_continuity(key, poly, lineno)
        thermo[key] = poly

    species_rows = sections.get("species", [])
    if not species_rows:
        raise MechanismError("no species defined")
    species = []
    for lineno, line in species_rows:
        parts = line.split()
        name = parts[0]
        kv = {}
        for tok in parts[1:]:
            if "=" not in tok:
                raise MechanismError(f"unexpected token {tok!r} in species row", line=lineno)
            k, v = tok.split("=", 1)
            kv[k] = v
        try:
            molar_mass = _parse_float(kv["M"], "M", lineno)
            elems = {k: int(v) for k, v in
                     ((i.split(":", 1)) for i in kv["elems"].split(","))}
            thermo_key = kv["thermo"]
        except KeyError as exc:
            raise MechanismError(f"species {name}: missing {exc}", line=lineno) from None
        if thermo_key not in thermo:
            raise MechanismError(f"species {name}: no thermo row {thermo_key!r}", line=lineno)
        _check_molar_mass(name, molar_mass, elems, lineno)
        species.append(Species(name, molar_mass, elems, thermo[thermo_key]))

    names = [sp.name for sp in species]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise MechanismError(f"duplicate species names: {dupes}")
    name_set = set(names)

    reactions = []
    by_id = {}
    for lineno, line in sections.get("reactions", []):
        rid, reactants, products, rate, reversible, _dup = _parse_reaction_line(line, lineno)
        for sp in list(reactants) + list(products):
            if sp not in name_set:
                raise MechanismError(f"reaction {rid}: unknown species {sp!r}", line=lineno)
        _check_element_balance(rid, reactants, products, species, lineno)
        if rid in by_id:
            prev = reactions[by_id[rid]]
            if prev.reactants != reactants or prev.products != products:
                raise MechanismError(
                    f"reaction {rid}: duplicate id with different stoichiometry", line=lineno)
            if rate.kind != ELEMENTARY or prev.rate.kind != ELEMENTARY:
                raise MechanismError(
                    f"reaction {rid}: duplicates are only supported for elementary rates",
                    line=lineno)
            reactions[by_id[rid]] = replace(
                prev, duplicates=prev.duplicates + (rate.arrhenius,))
        else:
            by_id[rid] = len(reactions)
            reactions.append(Reaction(rid, reactants, products, rate, reversible))

    default_bath = None
    for lineno, line in sections.get("options", []):
        if "=" not in line:
            raise MechanismError(f"unexpected option line {line!r}", line=lineno)
        k, v = (s.strip() for s in line.split("=", 1))
        if k == "default_bath":
            if v not in name_set:
                raise MechanismError(f"default_bath: unknown species {v!r}", line=lineno)
            default_bath = v
        else:
            raise MechanismError(f"unknown option {k!r}", line=lineno)

    return Mechanism(tuple(species), tuple(reactions), default_bath)


def _check_cp_continuity(key, poly, lineno):
    T = poly.t_mid
    lo = sum(c * T**i for i, c in enumerate(poly.coeffs_low[:5]))
    hi = sum(c * T**i for i, c in enumerate(poly.coeffs_high[:5]))
    scale = max(abs(lo), abs(hi), 1e-300)
    if abs(lo - hi) / scale > 1e-4:
        raise MechanismError(
            f"thermo row {key}: cp/R branches disagree at t_mid "
            f"({lo:.6g} vs {hi:.6g})", line=lineno)


def _check_molar_mass(name, molar_mass, elems, lineno):
    try:
        computed = sum(ATOMIC_MASSES[e] * n for e, n in elems.items())
    except KeyError as exc:
        raise MechanismError(f"species {name}: unknown element {exc}", line=lineno) from None
    if abs(computed - molar_mass) / computed > 1e-3:
        raise MechanismError(
            f"species {name}: molar mass {molar_mass} inconsistent with "
            f"element composition ({computed:.5f})", line=lineno)


def _check_element_balance(rid, reactants, products, species, lineno):
    comp = {sp.name: sp.element_composition for sp in species}
    balance = {}
    for sp, nu in reactants.items():
        for e, n in comp[sp].items():
            balance[e] = balance.get(e, 0) + nu * n
    for sp, nu in products.items():
        for e, n in comp[sp].items():
            balance[e] = balance.get(e, 0) - nu * n
    bad = {e: d for e, d in balance.items() if d != 0}
    if bad:
        raise MechanismError(f"reaction {rid}: element imbalance {bad}", line=lineno)


# ---------------------------------------------------------------------------
# serialization

def _fmt(x):
    return f"{x:.17g}"


def _fmt_side(stoich, m_marker):
    terms = []
    for name, nu in stoich.items():
        terms.append(name if nu == 1 else f"{nu} {name}")
    side = " + ".join(terms)
    return side + m_marker


def _fmt_effs(effs):
    return ",".join(f"{name}:{_fmt(v)}" for name, v in effs.items())


def serialize_mechanism(mech):
    """Render a Mechanism back to file text; parse(serialize(m)) == m."""
    lines = ["[species]"]
    thermo_rows = []
    for sp in mech.species:
        elems = ",".join(f"{e}:{n}" for e, n in sp.element_composition.items())
        lines.append(f"{sp.name}  M={_fmt(sp.molar_mass)}  elems={elems}  thermo={sp.name}")
        p = sp.thermo
        thermo_rows.append(
            f"{sp.name}  t_low={_fmt(p.t_low)} t_mid={_fmt(p.t_mid)} t_high={_fmt(p.t_high)}"
            f"  low={','.join(_fmt(c) for c in p.coeffs_low)}"
            f"  high={','.join(_fmt(c) for c in p.coeffs_high)}"
        )
    lines.append("")
    lines.append("[thermo]")
    lines.extend(thermo_rows)
    lines.append("")
    lines.append("[reactions]")
    for rxn in mech.reactions:
        rate = rxn.rate
        if rate.kind == FALLOFF:
            marker = " (+M)"
        elif rate.kind == THIRD_BODY:
            marker = " + M"
        else:
            marker = ""
        arrow = "=" if rxn.reversible else "=>"
        eqn = f"{_fmt_side(rxn.reactants, marker)} {arrow} {_fmt_side(rxn.products, marker)}"
        for i, arr in enumerate(rxn.arrhenius_lines):
            parts = [f"A={_fmt(arr.A)}", f"beta={_fmt(arr.beta)}", f"Ea={_fmt(arr.Ea)}"]
            if i > 0:
                parts.append("dup")
            elif rate.kind == FALLOFF:
                parts.append(
                    f"falloff: Alow={_fmt(rate.low.A)} betalow={_fmt(rate.low.beta)}"
                    f" Ealow={_fmt(rate.low.Ea)} troe_fc={_fmt(rate.troe_fc)}"
                )
            if i == 0 and rate.efficiencies:
                parts.append(f"tb: {_fmt_effs(rate.efficiencies)}")
            lines.append(f"{rxn.rid}: {eqn} | " + " ".join(parts))
    if mech.default_bath is not None:
        lines.append("")
        lines.append("[options]")
        lines.append(f"default_bath={mech.default_bath}")
    lines.append("")
    return "\n".join(lines)


def load_mechanism(path):
    with open(path, encoding="utf-8") as fh:
        return parse_mechanism(fh.read())


def baseline_mechanism():
    """The bundled baseline H2/O2 mechanism."""
    from importlib.resources import files

    return parse_mechanism(files("kincal.data").joinpath("h2o2_baseline.mech").read_text())
