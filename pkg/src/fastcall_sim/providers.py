"""Fastcall providers: registration requests, policies, and builtin providers.

A provider validates an application's registration request against its
policy, then assembles everything an entry needs: the program text, region
requests, config constants, an optional per-invocation policy hook, and an
optional calibrated work cost.  The framework maps the regions, verifies the
program and installs the entry; a Deny decision happens before any of that,
so denied requests leave the address space and table untouched.

Builtin providers:

``noop``, ``copy64``, ``ntcopy64``
    microbenchmark workloads (return immediately / copy 64 bytes from the
    shared buffer into the scratchpad, cached or with a non-temporal flush).
``net_send``
    writes a 64-byte frame descriptor from the shared buffer to a NIC TX
    ring, but only when the destination IPv4 address in the header's first
    four bytes (big endian) equals the address granted at registration.
``rate_limited``
    a token bucket persisted in a fastcall-private region; each invocation
    costs one token, tokens refill linearly with simulated time.
``nvme_submit``
    copies a 64-byte command from the shared buffer into the next free slot
    of an NVMe-style submission queue and rings the doorbell; full queues
    deny the call.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from .costs import CostParameters
from .devices import RingDevice
from .dispatch import HookContext, PolicyHookLike, Simulator
from .errors import InstallError, UnknownProviderError
from .ir import FastcallProgram, parse_program
from .memory import AccessDomain, AddressSpace, MemoryRegion, RegionKind
from .verifier import verify

DENY_IP = "ip-not-permitted"
DENY_RATE = "rate-exceeded"
DENY_QUEUE_FULL = "queue-full"

HEADER_BYTES = 64  # dest IPv4 in bytes 0..3 (big endian), payload stub after
COMMAND_BYTES = 64
RATE_STATE_BYTES = 16  # struct '<dd': tokens, last refill timestamp ns


@dataclass(frozen=True)
class RegistrationRequest:
    process_id: object
    provider_name: str
    parameters: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class RegionRequest:
    slot_id: str
    kind: RegionKind
    length: int
    ring_depth: Optional[int] = None  # DeviceMMIO: depth of the backing ring device


@dataclass(frozen=True)
class EntrySpec:
    """Everything the framework needs to map, verify and install an entry."""

    program_text: str
    region_requests: tuple[RegionRequest, ...] = ()
    config: tuple[int, ...] = ()
    hook: Optional[PolicyHookLike] = None
    work_cost_ns: Optional[float] = None
    initialize: Optional[Callable[[AddressSpace, dict[str, MemoryRegion]], None]] = None


@dataclass(frozen=True)
class Grant:
    spec: EntrySpec


@dataclass(frozen=True)
class Deny:
    reason: str


PolicyDecision = Grant | Deny


@dataclass(frozen=True)
class RegistrationResult:
    decision: PolicyDecision
    index: Optional[int] = None
    modeled_latency_ns: Optional[float] = None

    @property
    def granted(self) -> bool:
        return isinstance(self.decision, Grant)

    @property
    def deny_reason(self) -> Optional[str]:
        return self.decision.reason if isinstance(self.decision, Deny) else None


@dataclass(frozen=True)
class RateLimiterState:
    """Decoded token-bucket state; the mutable pair lives in region bytes."""

    tokens: float
    last_refill_ns: float
    capacity: int
    refill_rate: int  # tokens per simulated second

    @staticmethod
    def pack(tokens: float, last_refill_ns: float) -> bytes:
        return struct.pack("<dd", tokens, last_refill_ns)

    @staticmethod
    def unpack(blob: bytes) -> tuple[float, float]:
        return struct.unpack("<dd", blob)


def token_bucket_decide(
    tokens: float, last_refill_ns: float, refill_rate: int, capacity: int, now_ns: float
) -> tuple[bool, float, float]:
    """One token-bucket step: refill for elapsed time, then try to spend a token."""
    elapsed = max(0.0, now_ns - last_refill_ns)
    tokens = min(float(capacity), tokens + elapsed * refill_rate * 1e-9)
    if tokens >= 1.0:
        return True, tokens - 1.0, now_ns
    return False, tokens, now_ns


def ip_to_int(text: str) -> int:
    parts = text.split(".")
    if len(parts) != 4:
        raise ValueError(f"not a dotted-quad IPv4 address: {text!r}")
    value = 0
    for part in parts:
        if not part.isdigit() or not 0 <= int(part) <= 255:
            raise ValueError(f"bad IPv4 octet {part!r} in {text!r}")
        value = (value << 8) | int(part)
    return value


def build_packet_header(dest_ip: str | int, payload: bytes = b"") -> bytes:
    """64-byte application frame: dest IPv4 big endian, then the payload stub."""
    ip = ip_to_int(dest_ip) if isinstance(dest_ip, str) else int(dest_ip)
    if len(payload) > HEADER_BYTES - 4:
        raise ValueError(f"payload stub larger than {HEADER_BYTES - 4} bytes")
    return ip.to_bytes(4, "big") + payload.ljust(HEADER_BYTES - 4, b"\x00")


# --- program assembly ----------------------------------------------------------


def noop_program_text() -> str:
    return "RET r0\n"


def copy64_program_text(non_temporal: bool = False) -> str:
    lines = [
        "SLOT s0 SharedRW 64",
        "SLOT s1 Scratchpad 64",
    ]
    for offset in range(0, 64, 8):
        lines.append(f"LOAD r1, s0, {offset}, w8")
        lines.append(f"STORE s1, {offset}, r1, w8")
    if non_temporal:
        lines.append("FENCE_NT")
    lines.append("MOV_IMM r0, 0")
    lines.append("RET r0")
    return "\n".join(lines) + "\n"


def ring_submit_program_text(depth: int, config: tuple[int, ...], mask_index: int) -> str:
    """Copy 64 bytes from the shared buffer into ring slot (submissions % depth).

    The slot index derives from the doorbell register, masked with the
    depth-1 constant taken from the config; that mask is what lets the
    verifier bound the store offsets.  Finishes by ringing the doorbell and
    returning the slot index.
    """
    if depth <= 0 or depth & (depth - 1):
        raise ValueError("ring depth must be a power of two")
    device = RingDevice(depth)
    doorbell = device.doorbell_offset
    lines = [
        f"SLOT s0 SharedRW {COMMAND_BYTES}",
        f"SLOT s1 DeviceMMIO {device.region_length}",
    ]
    lines += [f"CONFIG {value}" for value in config]
    lines += [
        f"LOAD r1, s1, {doorbell}, w8",  # total submissions so far
        f"LOAD_CONFIG r5, {mask_index}",
        "MOV_REG r2, r1",
        "AND r2, r5",  # slot index
        "MOV_REG r3, r2",
        "SHL r3, 6",  # slot byte offset
    ]
    for offset in range(0, COMMAND_BYTES, 8):
        lines.append(f"LOAD r4, s0, {offset}, w8")
        lines.append("STORE s1, r3, r4, w8")
        lines.append("ADD r3, 8")
    lines += [
        "ADD r1, 1",
        f"STORE s1, {doorbell}, r1, w8",  # publish the slot
        "MOV_REG r0, r2",
        "RET r0",
    ]
    return "\n".join(lines) + "\n"


# --- policy hooks ---------------------------------------------------------------


class IpFilterHook(PolicyHookLike):
    """Denies invocations whose header destination differs from the granted IP."""

    cost_ns = 2.0  # modeled: one shared-memory load plus a compare

    def __init__(self, header_slot: str):
        self.header_slot = header_slot

    def __call__(self, ctx: HookContext) -> Optional[str]:
        region = ctx.entry.bindings[self.header_slot]
        header = ctx.space.read(AccessDomain.FASTCALL, region.base, 4)
        if int.from_bytes(header, "big") != ctx.entry.config[0]:
            return DENY_IP
        return None


class TokenBucketHook(PolicyHookLike):
    """Charges one token per invocation from state kept in a private region."""

    cost_ns = 5.0  # modeled: load state, refill arithmetic, store state

    def __init__(self, state_slot: str):
        self.state_slot = state_slot

    def __call__(self, ctx: HookContext) -> Optional[str]:
        region = ctx.entry.bindings[self.state_slot]
        tokens, last = RateLimiterState.unpack(
            ctx.space.read(AccessDomain.FASTCALL, region.base, RATE_STATE_BYTES)
        )
        rate, capacity = ctx.entry.config[0], ctx.entry.config[1]
        granted, tokens, last = token_bucket_decide(tokens, last, rate, capacity, ctx.now_ns)
        ctx.space.write(AccessDomain.FASTCALL, region.base, RateLimiterState.pack(tokens, last))
        return None if granted else DENY_RATE


class QueueDepthHook(PolicyHookLike):
    """Denies submissions while the ring already holds `depth` records."""

    cost_ns = 2.0  # modeled: device counter read plus a compare

    def __init__(self, ring_slot: str):
        self.ring_slot = ring_slot

    def __call__(self, ctx: HookContext) -> Optional[str]:
        device = ctx.entry.bindings[self.ring_slot].device
        if device.pending() >= ctx.entry.config[0]:
            return DENY_QUEUE_FULL
        return None


# --- providers -------------------------------------------------------------------


def _int_param(parameters, key: str, default=None):
    value = parameters.get(key, default)
    if value is None:
        raise ValueError(f"missing parameter {key!r}")
    try:
        return int(str(value), 0)
    except ValueError:
        raise ValueError(f"parameter {key!r} must be an integer, got {value!r}") from None


def _depth_param(parameters, key: str, default: int) -> int:
    depth = _int_param(parameters, key, default)
    if depth <= 0 or depth & (depth - 1):
        raise ValueError(f"parameter {key!r} must be a positive power of two, got {depth}")
    return depth


class Provider:
    """Base class; subclasses validate parameters and emit an EntrySpec."""

    name: str = ""

    def prepare(self, request: RegistrationRequest, cost: CostParameters) -> PolicyDecision:
        raise NotImplementedError


class NoopProvider(Provider):
    name = "noop"

    def prepare(self, request, cost):
        return Grant(EntrySpec(program_text=noop_program_text(), work_cost_ns=0.0))


class Copy64Provider(Provider):
    name = "copy64"

    def prepare(self, request, cost):
        return Grant(EntrySpec(
            program_text=copy64_program_text(non_temporal=False),
            region_requests=(RegionRequest("s0", RegionKind.SHARED_RW, COMMAND_BYTES),),
            work_cost_ns=cost.work_copy64_ns,
        ))


class NtCopy64Provider(Provider):
    name = "ntcopy64"

    def prepare(self, request, cost):
        return Grant(EntrySpec(
            program_text=copy64_program_text(non_temporal=True),
            region_requests=(RegionRequest("s0", RegionKind.SHARED_RW, COMMAND_BYTES),),
            work_cost_ns=cost.work_ntcopy64_ns,
        ))


class NetSendProvider(Provider):
    name = "net_send"

    def prepare(self, request, cost):
        try:
            allowed = request.parameters["allowed_ip"]
        except KeyError:
            return Deny("missing parameter 'allowed_ip'")
        try:
            allowed_ip = ip_to_int(str(allowed))
            depth = _depth_param(request.parameters, "ring_depth", 1024)
        except ValueError as exc:
            return Deny(str(exc))
        device = RingDevice(depth)
        return Grant(EntrySpec(
            program_text=ring_submit_program_text(depth, (allowed_ip, depth - 1), mask_index=1),
            region_requests=(
                RegionRequest("s0", RegionKind.SHARED_RW, HEADER_BYTES),
                RegionRequest("s1", RegionKind.DEVICE_MMIO, device.region_length, ring_depth=depth),
            ),
            config=(allowed_ip, depth - 1),
            hook=IpFilterHook("s0"),
        ))


class RateLimitedProvider(Provider):
    name = "rate_limited"

    def prepare(self, request, cost):
        try:
            rate = _int_param(request.parameters, "rate_per_sec")
            capacity = _int_param(request.parameters, "capacity")
        except ValueError as exc:
            return Deny(str(exc))
        if rate < 0 or capacity < 0:
            return Deny("rate_per_sec and capacity must be non-negative")

        def initialize(space, bindings):
            region = bindings["s0"]
            # a zero refill rate permits nothing: start empty, never refill
            tokens = float(capacity) if rate > 0 else 0.0
            region.write_bytes_raw(0, RateLimiterState.pack(tokens, 0.0))

        return Grant(EntrySpec(
            program_text=(
                f"SLOT s0 FastcallPrivate {RATE_STATE_BYTES}\n"
                f"CONFIG {rate}\n"
                f"CONFIG {capacity}\n"
                "MOV_IMM r0, 0\n"
                "RET r0\n"
            ),
            region_requests=(RegionRequest("s0", RegionKind.FASTCALL_PRIVATE, RATE_STATE_BYTES),),
            config=(rate, capacity),
            hook=TokenBucketHook("s0"),
            initialize=initialize,
        ))


class NvmeSubmitProvider(Provider):
    name = "nvme_submit"

    def prepare(self, request, cost):
        try:
            depth = _depth_param(request.parameters, "queue_depth", 8)
        except ValueError as exc:
            return Deny(str(exc))
        device = RingDevice(depth)
        return Grant(EntrySpec(
            program_text=ring_submit_program_text(depth, (depth, depth - 1), mask_index=1),
            region_requests=(
                RegionRequest("s0", RegionKind.SHARED_RW, COMMAND_BYTES),
                RegionRequest("s1", RegionKind.DEVICE_MMIO, device.region_length, ring_depth=depth),
            ),
            config=(depth, depth - 1),
            hook=QueueDepthHook("s1"),
        ))


class ProviderRegistry:
    def __init__(self):
        self._providers: dict[str, Provider] = {}

    def add(self, provider: Provider) -> None:
        self._providers[provider.name] = provider

    def get(self, name: str) -> Provider:
        try:
            return self._providers[name]
        except KeyError:
            raise UnknownProviderError(f"no fastcall provider named {name!r}") from None

    def names(self) -> list[str]:
        return sorted(self._providers)


def builtin_registry() -> ProviderRegistry:
    registry = ProviderRegistry()
    for provider_cls in (
        NoopProvider, Copy64Provider, NtCopy64Provider,
        NetSendProvider, RateLimitedProvider, NvmeSubmitProvider,
    ):
        registry.add(provider_cls())
    return registry


def register(
    sim: Simulator,
    request: RegistrationRequest,
    registry: Optional[ProviderRegistry] = None,
) -> RegistrationResult:
    """Run the full registration flow for one request.

    Policy and program verification run before any region is mapped, so a
    denial or a provider bug leaves the process untouched.
    """
    registry = registry if registry is not None else builtin_registry()
    provider = registry.get(request.provider_name)
    decision = provider.prepare(request, sim.cost)
    if isinstance(decision, Deny):
        return RegistrationResult(decision=decision)
    spec = decision.spec

    program = parse_program(spec.program_text, name=f"{provider.name}")
    report = verify(program, sim.cost.wcet_ceiling_ns, sim.cost)
    if not report.accepted:
        first = report.violations[0] if report.violations else None
        raise InstallError(
            f"provider {provider.name!r} produced an unverifiable program"
            + (f": [{first.rule}] {first.message}" if first else "")
        )

    space = sim.space(request.process_id)
    bindings: dict[str, MemoryRegion] = {}
    for region_request in spec.region_requests:
        device = None
        if region_request.kind is RegionKind.DEVICE_MMIO:
            device = RingDevice(region_request.ring_depth, name=f"{provider.name}-ring")
        bindings[region_request.slot_id] = space.map_region(
            region_request.kind,
            region_request.length,
            AccessDomain.KERNEL_INFRA,
            device=device,
        )
    if spec.initialize is not None:
        spec.initialize(space, bindings)

    index = sim.install_entry(
        request.process_id,
        provider.name,
        program,
        bindings,
        config=spec.config,
        policy_hook=spec.hook,
        work_cost_ns=spec.work_cost_ns,
    )
    return RegistrationResult(
        decision=decision,
        index=index,
        modeled_latency_ns=sim.cost.registration_latency_ns(len(spec.region_requests)),
    )
