from typing import Any, Dict, Optional, Tuple, Union

from pydantic import ValidationError

from fusesim.adversary import (
    ConflictOrder,
    NetworkStrategy,
    PartyStrategy,
    enumerate_strategies,
    on_broadcast,
)
from fusesim.chain import ChainParams, Ledger, Trace, TraceRecord, genesis
from fusesim.common import DebugTargets, LogLevel, Role, configure_logging
from fusesim.errors import ConfigInvalid, FuseSimError
from fusesim.harness import (
    Classification,
    MatrixSummary,
    Scenario,
    Verdict,
    classify_trace,
    load_scenario,
    parse_scenario_text,
    run_matrix,
    run_scenario,
    validation_messages,
)
from fusesim.protocols import PROTOCOLS, ProtocolName, protocol_class


class Simulation:
    """
    Fluent builder for one scenario (or the whole matrix of a protocol):

        Simulation("newscs").with_params(t=14).with_network(malleate=True).run()
    """

    def __init__(self, protocol: Union[ProtocolName, str]):
        self.protocol = ProtocolName(str(protocol))
        self.params: Dict[str, int] = {}
        self.seed = 0
        self.max_rounds: Optional[int] = None
        self.network: Optional[NetworkStrategy] = None
        self.network_fields: Dict[str, Any] = {}
        self.parties: Dict[Role, Dict[str, Any]] = {}
        self.fuzz = False
        self.workers = 1
        self.logger = False

    def with_params(
        self, d: Optional[int] = None, t: Optional[int] = None, max_bb: Optional[int] = None
    ):
        for name, value in (("d", d), ("t", t), ("max_bb", max_bb)):
            if value is not None:
                self.params[name] = value
        return self

    def with_seed(self, seed: int):
        self.seed = seed
        return self

    def with_max_rounds(self, max_rounds: int):
        self.max_rounds = max_rounds
        return self

    def with_network(self, strategy: Optional[NetworkStrategy] = None, **fields):
        """Either a ready strategy, or NetworkStrategy fields sized to the chain's max_bb."""
        if strategy is not None and fields:
            raise ValueError("Pass either a NetworkStrategy or its fields, not both")
        self.network = strategy
        self.network_fields = fields
        return self

    def with_party(self, role: Union[Role, str], **deviations):
        role = Role(str(role).lower())
        self.parties[role] = deviations
        return self

    def with_fuzz(self, fuzz: bool = True):
        self.fuzz = fuzz
        return self

    def with_workers(self, workers: int):
        if workers < 1:
            raise ValueError("workers must be at least 1")
        self.workers = workers
        return self

    def debug(self, target: Optional[Union[DebugTargets, str]] = None):
        self.log(LogLevel.DEBUG.value, target)
        return self

    def log(
        self,
        level: Union[LogLevel, str] = LogLevel.ERROR.value,
        target: Optional[Union[DebugTargets, str]] = None,
    ):
        configure_logging(level, target)
        self.logger = True
        return self

    def _chain_params(self) -> ChainParams:
        try:
            return ChainParams(**self.params)
        except ValidationError as e:
            raise ConfigInvalid(validation_messages(e)) from None

    def scenario(self) -> Scenario:
        params = self._chain_params()
        network = self.network
        if network is None:
            fields = {"max_bb": params.max_bb, **self.network_fields}
            fields.setdefault(
                "name",
                f"{'malleate' if fields.get('malleate') else 'honest'}"
                f"/delay-{fields.get('delay', 1)}",
            )
            try:
                network = NetworkStrategy(**fields)
            except ValidationError as e:
                raise ConfigInvalid(validation_messages(e)) from None
        try:
            parties = {
                role: PartyStrategy(role=role, fuzz=self.fuzz, **deviations)
                for role, deviations in self.parties.items()
            }
        except ValidationError as e:
            raise ConfigInvalid(validation_messages(e)) from None
        return Scenario.build(
            protocol=self.protocol,
            params=params,
            seed=self.seed,
            network=network,
            parties=parties,
            max_rounds=self.max_rounds,
            fuzz=self.fuzz,
        )

    def run(self) -> Tuple[Verdict, Trace]:
        if not self.logger:
            self.log(LogLevel.ERROR.value, None)
        return run_scenario(self.scenario())

    def matrix(self) -> MatrixSummary:
        if not self.logger:
            self.log(LogLevel.ERROR.value, None)
        params = self._chain_params()
        return run_matrix(
            self.protocol,
            d=params.d,
            t=params.t,
            max_bb=params.max_bb,
            workers=self.workers,
            seed=self.seed,
        )


__all__ = [
    "ChainParams",
    "Classification",
    "ConfigInvalid",
    "ConflictOrder",
    "DebugTargets",
    "FuseSimError",
    "Ledger",
    "LogLevel",
    "MatrixSummary",
    "NetworkStrategy",
    "PROTOCOLS",
    "PartyStrategy",
    "ProtocolName",
    "Role",
    "Scenario",
    "Simulation",
    "Trace",
    "TraceRecord",
    "Verdict",
    "classify_trace",
    "enumerate_strategies",
    "genesis",
    "load_scenario",
    "on_broadcast",
    "parse_scenario_text",
    "protocol_class",
    "run_matrix",
    "run_scenario",
]
