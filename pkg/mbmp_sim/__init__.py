"""MBMP ad hoc network admission-control simulator."""
from mbmp_sim.protocol import ProtocolVariant
from mbmp_sim.scenario import Scenario, load_scenario
from mbmp_sim.simcore import run

__all__ = ["ProtocolVariant", "Scenario", "load_scenario", "run"]
