"""Little-endian helpers shared by the datastore and checkpoint formats."""

from __future__ import annotations

import struct


def pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class Reader:
    """Cursor over a byte buffer that raises ``truncated``/``invalid`` on bad input."""

    def __init__(self, buf: bytes, truncated: type[Exception], invalid: type[Exception]):
        self.buf = buf
        self.pos = 0
        self.truncated = truncated
        self.invalid = invalid

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise self.truncated(f"unexpected end of file at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise self.invalid(f"invalid UTF-8 at byte {self.pos}: {exc}") from None

    def at_end(self) -> bool:
        return self.pos == len(self.buf)
