"""Builds the golden ActBatch frame straight from the documented layout.

Writes tests/data/act_batch_golden.hex; the C++ encoder must reproduce it.
"""
import pathlib
import struct
import zlib

payload = struct.pack("<QI", 0x0102030405060708, 2)
payload += struct.pack("<II", 1, 0)
payload += struct.pack("<H", 1)
# block 3, nf4 (wire value 3), shape 1x1x3, scale 2.0, two code bytes
payload += struct.pack("<HB3IfI", 3, 3, 1, 1, 3, 2.0, 2) + bytes([0x21, 0x0F])

frame = b"MBLM" + struct.pack("<HBBI", 1, 3, 0, len(payload)) + payload
frame += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)

out = pathlib.Path(__file__).resolve().parents[1] / "data" / "act_batch_golden.hex"
out.write_text(frame.hex() + "\n")
print(frame.hex())
