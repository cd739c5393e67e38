from .isa import (MipsInstructionWord, Mnemonic, decode, encode, InstrError)
from .asm import assemble, disassemble, AsmError, MipsProgram
from .emulator import (CpuState, CpuStepConfig, step_plain, run_plain,
                       RunResult, WriteEvent, EmulatorError, initial_state,
                       run_plain_vec)
from .stepnet import build_step_netlist, StepLayout

__all__ = [
    "MipsInstructionWord", "Mnemonic", "decode", "encode", "InstrError",
    "assemble", "disassemble", "AsmError", "MipsProgram",
    "CpuState", "CpuStepConfig", "step_plain", "run_plain", "RunResult",
    "WriteEvent", "EmulatorError", "initial_state", "run_plain_vec",
    "build_step_netlist", "StepLayout",
]
