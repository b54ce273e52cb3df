"""Simulated MMIO ring devices.

A :class:`RingDevice` models the submit side of a queue-based device (an
NVMe-style submission queue or a NIC TX ring).  Its register window layout:

    offset 0 .. depth*64        - depth record slots, 64 bytes each
    offset depth*64, 8 bytes    - doorbell register (write = publish one slot,
                                  read = total submissions so far)
    offset depth*64 + 8, 8 bytes - consumer counter (read-only; total records
                                   drained so far)

Writing the doorbell publishes exactly one slot: the record at index
``tail % depth`` becomes visible to :meth:`RingDevice.drain` and ``tail``
advances.  The value written to the doorbell is ignored; the register always
reads back the submission count.
"""

from __future__ import annotations

from .errors import DeviceError

RECORD_BYTES = 64
VALID_WIDTHS = (1, 2, 4, 8)
_MASK64 = (1 << 64) - 1


class RingDevice:
    """Ring buffer of 64-byte records with a doorbell register."""

    def __init__(self, depth: int, name: str = "ring"):
        if depth <= 0:
            raise ValueError("ring depth must be positive")
        self.depth = depth
        self.name = name
        self._slots = bytearray(depth * RECORD_BYTES)
        self.head = 0  # total records drained, wraps at 2^64
        self.tail = 0  # total records published, wraps at 2^64
        self.doorbell = 0  # total submissions mod 2^64; always equals tail

    @property
    def doorbell_offset(self) -> int:
        return self.depth * RECORD_BYTES

    @property
    def head_offset(self) -> int:
        return self.depth * RECORD_BYTES + 8

    @property
    def region_length(self) -> int:
        # slots + doorbell + consumer counter
        return self.depth * RECORD_BYTES + 16

    def pending(self) -> int:
        """Records published but not yet drained."""
        return (self.tail - self.head) & _MASK64

    def mmio_store(self, offset: int, width: int, value: int) -> None:
        if width not in VALID_WIDTHS:
            raise DeviceError(f"{self.name}: invalid store width {width}")
        if offset < 0 or offset + width > self.region_length:
            raise DeviceError(
                f"{self.name}: store [{offset}, {offset + width}) outside "
                f"{self.region_length}-byte window"
            )
        if offset == self.doorbell_offset and width == 8:
            self._ring_doorbell()
            return
        if offset + width > self.doorbell_offset:
            # Partial doorbell writes and writes to the consumer counter are
            # protocol violations, not data stores.
            raise DeviceError(f"{self.name}: store to device register area at {offset}")
        self._slots[offset:offset + width] = (value & _MASK64).to_bytes(8, "little")[:width]

    def mmio_load(self, offset: int, width: int) -> int:
        if width not in VALID_WIDTHS:
            raise DeviceError(f"{self.name}: invalid load width {width}")
        if offset == self.doorbell_offset and width == 8:
            return self.doorbell
        if offset == self.head_offset and width == 8:
            return self.head & _MASK64
        if offset < 0 or offset + width > self.doorbell_offset:
            raise DeviceError(f"{self.name}: load [{offset}, {offset + width}) not a slot or register")
        return int.from_bytes(self._slots[offset:offset + width], "little")

    def _ring_doorbell(self) -> None:
        if self.pending() >= self.depth:
            raise DeviceError(f"{self.name}: doorbell write on a full ring")
        self.tail = (self.tail + 1) & _MASK64
        self.doorbell = (self.doorbell + 1) & _MASK64

    def drain(self) -> list[bytes]:
        """Return and consume all published records, oldest first."""
        records = []
        while self.head != self.tail:
            slot = (self.head % self.depth) * RECORD_BYTES
            records.append(bytes(self._slots[slot:slot + RECORD_BYTES]))
            self.head = (self.head + 1) & _MASK64
        return records
