"""Crypto-aware BIR programs, their symbolic execution and IML model extraction."""

from .bits import Bits
from .bir import BirProgram, RandomTape
from .birparse import load_program, parse_program
from .extract import extract_program
from .iml import IMLContext, parse_process
from .mixed import MixedSystem, differential_run_bir_sbir, differential_run_sbir_iml
from .security import check_attack_preservation, insecurity_bir, insecurity_iml

__all__ = [
    "Bits", "BirProgram", "RandomTape", "load_program", "parse_program", "extract_program",
    "IMLContext", "parse_process", "MixedSystem", "differential_run_bir_sbir",
    "differential_run_sbir_iml", "check_attack_preservation", "insecurity_bir", "insecurity_iml",
]
