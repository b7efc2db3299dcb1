"""
Scenarios, the simulation loop and the fairness matrix.

A Scenario is the full input of one run: protocol, chain parameters, seed,
network strategy and one strategy per party. run_scenario plays it on a fresh
ledger and returns the trace plus a Verdict; the Verdict is always computed
from the trace alone, so classify_trace over a stored trace file gives the
same answer.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from pathlib import Path
from typing import ClassVar, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic import model_validator

from fusesim import crypto
from fusesim.adversary import NetworkStrategy, PartyStrategy, enumerate_strategies
from fusesim.chain import EMPTY, ChainParams, Trace, TraceRecord, genesis
from fusesim.common import Role
from fusesim.errors import ConfigInvalid
from fusesim.protocols import ProtocolName, protocol_class
from fusesim.txmodel import ErrorKind

logger = logging.getLogger(__name__)

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


class Classification(Enum):
    """Enum for the fairness verdict of one run."""

    NOMINAL = "nominal"
    PUNISHED_DEVIATOR = "punished-deviator"
    STUCK_FUNDS = "stuck-funds"
    VIOLATION = "violation"

    def __str__(self):
        return self.value

    @property
    def problem(self) -> bool:
        return self in (Classification.STUCK_FUNDS, Classification.VIOLATION)


def _honest_parties() -> Dict[Role, PartyStrategy]:
    return {role: PartyStrategy.honest(role) for role in Role}


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    protocol: ProtocolName
    params: ChainParams = Field(default_factory=ChainParams)
    seed: int = 0
    network: NetworkStrategy = Field(default_factory=NetworkStrategy.honest)
    parties: Dict[Role, PartyStrategy] = Field(default_factory=_honest_parties)
    max_rounds: Optional[int] = None
    fuzz: bool = False

    @model_validator(mode="before")
    @classmethod
    def _network_for_params(cls, data):
        if isinstance(data, dict) and data.get("network") is None:
            params = data.get("params")
            if isinstance(params, ChainParams):
                max_bb = params.max_bb
            elif isinstance(params, dict):
                max_bb = params.get("max_bb", 1)
            else:
                max_bb = 1
            if isinstance(max_bb, int) and max_bb >= 1:
                data = {**data, "network": NetworkStrategy.honest(max_bb)}
        return data

    @field_validator("parties")
    @classmethod
    def _both_parties(cls, parties: Dict[Role, PartyStrategy]) -> Dict[Role, PartyStrategy]:
        return {role: parties.get(role) or PartyStrategy.honest(role) for role in Role}

    @model_validator(mode="after")
    def _consistent(self):
        params = self.params
        errors = []
        if self.network.max_bb != params.max_bb:
            errors.append(
                f"network.max_bb: {self.network.max_bb} differs from params.max_bb "
                f"{params.max_bb}"
            )
        if self.max_rounds is not None and self.max_rounds <= params.settle_round:
            errors.append(
                f"max_rounds: must exceed t + 2*max_bb = {params.settle_round}, "
                f"got {self.max_rounds}"
            )
        run_class = protocol_class(self.protocol)
        min_t = run_class.min_t(params.max_bb)
        if params.t <= min_t:
            errors.append(
                f"params.t: {self.protocol} needs t > {min_t} for max_bb={params.max_bb}, "
                f"got {params.t}"
            )

        for role, party in self.parties.items():
            if party.role is not role:
                errors.append(f"party.{role}: strategy is for party {party.role}")
            points = run_class.ABORT_POINTS[role]
            if party.abort_at is not None and party.abort_at not in points:
                expected = ", ".join(points) or "none"
                errors.append(
                    f"party.{role}.abort_at: {party.abort_at!r} is not a step of "
                    f"{self.protocol} (expected: {expected})"
                )
            if party.withhold_secret and run_class.WITHHOLD_STEP.get(role) is None:
                errors.append(
                    f"party.{role}.withhold_secret: {self.protocol} gives party {role} "
                    "no secret to withhold"
                )

        if errors:
            raise ValueError("; ".join(dict.fromkeys(errors)))
        return self

    @classmethod
    def build(cls, **fields) -> "Scenario":
        """Same as the constructor, with validation errors raised as ConfigInvalid."""
        try:
            return cls(**fields)
        except ValidationError as e:
            raise ConfigInvalid(validation_messages(e)) from None

    @property
    def deviators(self) -> List[Role]:
        return [role for role, party in self.parties.items() if party.deviations]

    @property
    def rounds(self) -> int:
        """Round limit: max_rounds or t + 3*max_bb + 1."""
        if self.max_rounds is not None:
            return self.max_rounds
        return self.params.t + 3 * self.params.max_bb + 1

    def header(self) -> str:
        params = self.params
        return (
            f"protocol={self.protocol},d={params.d},t={params.t},max_bb={params.max_bb},"
            f"seed={self.seed},network={self.network}"
        )


def validation_messages(error: ValidationError) -> List[str]:
    messages = []
    for item in error.errors():
        msg = item["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, ") :]
        loc = ".".join(str(part) for part in item["loc"])
        messages.extend(
            f"{loc}: {part}" if loc else part for part in msg.split("; ") if part
        )
    return messages


# scenario files


def _flag(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ConfigInvalid([f"{key}: expected true or false, got {value!r}"])


def _integer(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigInvalid([f"{key}: expected an integer, got {value!r}"]) from None


def parse_scenario_text(text: str) -> Scenario:
    """
    Parses the flat `key = value` scenario format. Blank lines and `#`
    comments are ignored; unknown keys are rejected.
    """
    data: Dict[str, object] = {}
    params: Dict[str, object] = {}
    network: Dict[str, object] = {}
    delay_table: Dict[str, int] = {}
    parties: Dict[str, Dict[str, object]] = {str(role): {"role": str(role)} for role in Role}
    errors: List[str] = []

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {number}: expected `key = value`, got {line!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            _assign(key, value, data, params, network, delay_table, parties)
        except ConfigInvalid as e:
            errors.extend(e.errors)

    if errors:
        raise ConfigInvalid(errors)

    max_bb = params.get("max_bb", 1)
    if delay_table:
        network["delay_table"] = delay_table
        network.setdefault("delay", "table")
    malleating = bool(network.get("malleate"))
    network["name"] = (
        f"{'malleate' if malleating else 'honest'}/delay-{network.get('delay', 1)}"
    )
    network["max_bb"] = max_bb

    fuzz = bool(data.get("fuzz", False))
    for party in parties.values():
        party["fuzz"] = fuzz

    return Scenario.build(**data, params=params, network=network, parties=parties)


def _assign(key, value, data, params, network, delay_table, parties):
    if key == "protocol":
        data["protocol"] = value
    elif key in ("seed", "max_rounds"):
        data[key] = _integer(key, value)
    elif key == "fuzz":
        data["fuzz"] = _flag(key, value)
    elif key in ("params.d", "params.t", "params.max_bb"):
        params[key.split(".", 1)[1]] = _integer(key, value)
    elif key == "network.malleate":
        if value.lower() in _TRUE + _FALSE:
            network["malleate"] = _flag(key, value)
        else:
            network["malleate"] = frozenset(v.strip() for v in value.split(",") if v.strip())
    elif key == "network.delay":
        network["delay"] = value if value in ("max", "table") else _integer(key, value)
    elif key.startswith("network.delay."):
        delay_table[key[len("network.delay.") :]] = _integer(key, value)
    elif key == "network.order":
        network["conflict_order"] = value
    elif key.startswith("party."):
        parts = key.split(".")
        if len(parts) != 3 or parts[1] not in parties:
            raise ConfigInvalid([f"{key}: unknown key"])
        field = parts[2]
        if field == "abort_at":
            parties[parts[1]]["abort_at"] = value or None
        elif field in ("withhold_secret", "send_bad_signature"):
            parties[parts[1]][field] = _flag(key, value)
        else:
            raise ConfigInvalid([f"{key}: unknown key"])
    else:
        raise ConfigInvalid([f"{key}: unknown key"])


def load_scenario(path: Union[str, Path]) -> Scenario:
    return parse_scenario_text(Path(path).read_text())


# running


class Verdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    deltas: Dict[str, int]
    terminal_phase: str
    classification: Classification
    deviators: List[str] = Field(default_factory=list)
    conserved: bool = True

    def summary(self) -> str:
        deltas = ",".join(f"{role}={delta:+d}" for role, delta in sorted(self.deltas.items()))
        return f"{self.classification} deltas={deltas} phase={self.terminal_phase}"


def _fields(detail: str) -> Dict[str, str]:
    return dict(item.split("=", 1) for item in detail.split(",") if "=" in item)


def _numbers(record: TraceRecord, *keys: str) -> Dict[str, int]:
    """Integer detail fields of a record; a stored trace missing one is unusable."""
    fields = _fields(record.detail)
    where = f"round {record.round} {record.event}"
    missing = [f"{where}: missing {key}=" for key in keys if key not in fields]
    if missing:
        raise ConfigInvalid(missing)
    try:
        return {key: int(fields[key]) for key in keys}
    except ValueError:
        raise ConfigInvalid([f"{where}: expected integers, got {record.detail!r}"]) from None


def classify_trace(trace: Trace) -> Verdict:
    """Verdict from the party, reject, settle, locked, supply and end records."""
    deviators = sorted(r.role for r in trace.events("party") if r.detail != "honest")
    deltas = {r.role: _numbers(r, "delta")["delta"] for r in trace.events("settle")}
    honest = [role for role in deltas if role not in deviators]

    unknown_input = any(
        r.role.split(":", 1)[0] in honest and r.detail.startswith(ErrorKind.UNKNOWN_INPUT.value)
        for r in trace.events("reject")
    )
    locked = bool(trace.events("locked"))

    conserved = True
    for record in trace.events("supply"):
        supply = _numbers(record, "genesis", "final")
        conserved = conserved and supply["genesis"] == supply["final"]

    end = trace.events("end")
    phase = end[-1].detail if end and end[-1].detail != EMPTY else ""

    # with both parties deviating there is no honest loser to protect
    gains = [role for role in deviators if deltas.get(role, 0) > 0 and honest]
    if any(deltas[role] < 0 for role in honest) or gains:
        classification = Classification.VIOLATION
    elif unknown_input and locked:
        classification = Classification.STUCK_FUNDS
    elif any(deltas.get(role, 0) < 0 for role in deviators):
        classification = Classification.PUNISHED_DEVIATOR
    else:
        classification = Classification.NOMINAL

    return Verdict(
        deltas=deltas,
        terminal_phase=phase,
        classification=classification,
        deviators=deviators,
        conserved=conserved,
    )


def run_scenario(scenario: Scenario) -> Tuple[Verdict, Trace]:
    """Plays one scenario on a fresh ledger. Deterministic in the scenario."""
    logger.info("scenario %s", scenario.header())
    trace = Trace()
    params = scenario.params
    run_class = protocol_class(scenario.protocol)
    keys = {role: crypto.keygen(scenario.seed, role.label) for role in Role}

    trace.emit(0, "scenario", detail=scenario.header())
    for role in Role:
        trace.emit(0, "party", role=str(role), detail=str(scenario.parties[role]))

    ledger = genesis(
        run_class.allocations(keys, params.d),
        params,
        network=scenario.network,
        seed=scenario.seed,
        trace=trace,
    )
    session = run_class(ledger, keys, parties=scenario.parties, seed=scenario.seed)
    outcome = session.run(scenario.rounds)

    end = ledger.current_round
    for role in Role:
        initial, final = outcome.initial[str(role)], outcome.final[str(role)]
        trace.emit(
            end,
            "settle",
            role=str(role),
            detail=f"initial={initial},final={final},delta={final - initial}",
        )
    for outpoint, entry in ledger.locked_outputs():
        trace.emit(
            end,
            "locked",
            txid=outpoint.txid.hex(),
            detail=f"index={outpoint.index},value={entry.output.value}",
        )
    trace.emit(end, "supply", detail=f"genesis={ledger.genesis_total},final={ledger.total_value()}")
    trace.emit(end, "end", detail=outcome.terminal_phase)

    verdict = classify_trace(trace)
    if not verdict.conserved:
        logger.error("value not conserved: %s", trace.events("supply")[-1].detail)
    logger.info("verdict %s", verdict.summary())
    return verdict, trace


def _verdict_of(scenario: Scenario) -> Verdict:
    return run_scenario(scenario)[0]


# fairness matrix


class MatrixRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    network: str
    party_a: str
    party_b: str
    malleating: bool
    verdict: Verdict

    def cells(self) -> List[str]:
        return [
            self.network,
            self.party_a,
            self.party_b,
            str(self.verdict.classification),
            ",".join(f"{r}={d:+d}" for r, d in sorted(self.verdict.deltas.items())),
            self.verdict.terminal_phase or EMPTY,
        ]


class MatrixSummary(BaseModel):
    protocol: ProtocolName
    params: ChainParams
    rows: List[MatrixRow] = Field(default_factory=list)

    COLUMNS: ClassVar[Tuple[str, ...]] = (
        "network",
        "party_a",
        "party_b",
        "verdict",
        "deltas",
        "phase",
    )

    @property
    def counts(self) -> Dict[str, int]:
        found = {str(c): 0 for c in Classification}
        for row in self.rows:
            found[str(row.verdict.classification)] += 1
        return found

    @property
    def problems(self) -> List[MatrixRow]:
        return [row for row in self.rows if row.verdict.classification.problem]

    @property
    def ok(self) -> bool:
        """
        Legacy constructions must show at least one problem row, all of them
        under malleation; every other protocol must show none.
        """
        problems = self.problems
        if self.protocol.legacy:
            return bool(problems) and all(row.malleating for row in problems)
        return not problems

    def to_records(self) -> str:
        return "".join("\t".join(row.cells()) + "\n" for row in self.rows)

    def to_text(self) -> str:
        table = [list(self.COLUMNS)] + [row.cells() for row in self.rows]
        widths = [max(len(row[i]) for row in table) for i in range(len(self.COLUMNS))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table]
        counts = ", ".join(f"{name}={count}" for name, count in self.counts.items())
        params = self.params
        lines.append(
            f"{self.protocol} d={params.d} t={params.t} max_bb={params.max_bb}: "
            f"{len(self.rows)} scenarios, {counts}, {'ok' if self.ok else 'FAIL'}"
        )
        return "\n".join(lines) + "\n"

    def render(self, format: str = "text") -> str:
        if format == "records":
            return self.to_records()
        if format == "text":
            return self.to_text()
        raise ValueError(f"unknown format: {format}")


def run_matrix(
    protocol: Union[ProtocolName, str],
    d: int = 10,
    t: int = 12,
    max_bb: int = 1,
    workers: int = 1,
    seed: int = 0,
    exhaustive: bool = True,
) -> MatrixSummary:
    """
    Runs every (network, party A, party B) triple of enumerate_strategies.
    Rows keep the enumeration order whatever the number of workers.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    protocol = ProtocolName(str(protocol))
    try:
        params = ChainParams(d=d, t=t, max_bb=max_bb)
    except ValidationError as e:
        raise ConfigInvalid(validation_messages(e)) from None

    triples = enumerate_strategies(max_bb, str(protocol), exhaustive)
    scenarios = [
        Scenario.build(
            protocol=protocol,
            params=params,
            seed=seed,
            network=network,
            parties={Role.A: party_a, Role.B: party_b},
        )
        for network, party_a, party_b in triples
    ]
    logger.info("matrix %s: %d scenarios, %d workers", protocol, len(scenarios), workers)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(_verdict_of, scenarios))
    else:
        verdicts = [_verdict_of(scenario) for scenario in scenarios]

    rows = [
        MatrixRow(
            network=str(scenario.network),
            party_a=str(scenario.parties[Role.A]),
            party_b=str(scenario.parties[Role.B]),
            malleating=scenario.network.malleating,
            verdict=verdict,
        )
        for scenario, verdict in zip(scenarios, verdicts)
    ]
    summary = MatrixSummary(protocol=protocol, params=params, rows=rows)
    logger.info("matrix %s: %s", protocol, summary.counts)
    return summary


def expected_ok(protocol: Union[ProtocolName, str], verdict: Verdict) -> bool:
    """Whether a single verdict is acceptable for the protocol it came from."""
    return ProtocolName(str(protocol)).legacy or not verdict.classification.problem


__all__ = [
    "Classification",
    "MatrixRow",
    "MatrixSummary",
    "Scenario",
    "Verdict",
    "classify_trace",
    "expected_ok",
    "load_scenario",
    "parse_scenario_text",
    "run_matrix",
    "run_scenario",
    "validation_messages",
]
