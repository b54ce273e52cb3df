"""Exception hierarchy for the simulator."""


class SimulatorError(Exception):
    """Base class for all errors raised by the simulator."""


class SimulatorBug(SimulatorError):
    """An internal invariant was breached.

    Raising this is a bug signal: a correctly verified program or a
    correctly driven device model must never trigger it.
    """


class ParseError(SimulatorError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
        self.message = message


class PrivilegeViolation(SimulatorError):
    """A User or Fastcall caller attempted a kernel-infrastructure operation."""


class DuplicateProcessError(SimulatorError):
    pass


class UnknownProcessError(SimulatorError):
    pass


class AddressExhaustedError(SimulatorError):
    """The bump allocator ran out of room in the requested address window."""


class TableFullError(SimulatorError):
    pass


class EmptySlotError(SimulatorError):
    pass


class InstallError(SimulatorError):
    """install_entry precondition failure: verification or binding problems."""


class UnknownProviderError(SimulatorError):
    pass


class ScenarioError(SimulatorError):
    """Invalid benchmark scenario configuration."""


class CostConfigError(SimulatorError):
    """A latency cell has no default and was not supplied by configuration."""


class DeviceError(SimulatorBug):
    """Illegal MMIO access; the verifier should have made this unreachable."""


class RuntimeFault(SimulatorBug):
    """A verified program faulted at runtime; unreachable unless the verifier is wrong."""


class LifecycleAssertionError(SimulatorBug):
    """A functional assertion of the lifecycle demo failed."""
