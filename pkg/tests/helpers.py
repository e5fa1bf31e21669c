"""Hand-built binary fixtures shared by the reader and acceptance tests."""

import struct

import numpy as np


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


def idx_pair(tmp_path, images, labels, name="set"):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    ip = tmp_path / f"{name}-images.idx"
    lp = tmp_path / f"{name}-labels.idx"
    ip.write_bytes(idx_bytes(0x00000803, images.shape, images.tobytes()))
    lp.write_bytes(idx_bytes(0x00000801, labels.shape, labels.tobytes()))
    return ip, lp


def cifar_record(label, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(3072)
    return bytes([label]) + pixels.tobytes()


def malformed_idx(tmp_path):
    """(name, images_path, labels_path) triples that must be rejected."""
    good_img = idx_bytes(0x00000803, (2, 2, 2), range(8))
    good_lab = idx_bytes(0x00000801, (2,), [0, 1])
    cases = {
        "labels_wrong_magic": (good_img, idx_bytes(0x00000803, (2,), [0, 1])),
        "images_wrong_magic": (idx_bytes(0x00000801, (2, 2, 2), range(8)), good_lab),
        "images_truncated": (good_img[:-1], good_lab),
        "labels_truncated": (good_img, good_lab[:-1]),
        "header_truncated": (good_img[:9], good_lab),
        "count_mismatch": (idx_bytes(0x00000803, (3, 2, 2), range(12)), good_lab),
        "trailing_bytes": (good_img + b"\x00", good_lab),
        "empty": (b"", good_lab),
    }
    out = []
    for name, (img, lab) in cases.items():
        ip = tmp_path / f"{name}-img"
        lp = tmp_path / f"{name}-lab"
        ip.write_bytes(img)
        lp.write_bytes(lab)
        out.append((name, ip, lp))
    return out


def malformed_cifar(tmp_path):
    rec = cifar_record(3, np.zeros(3072))
    cases = {
        "empty": b"",
        "short_3072": rec[1:],
        "extra_byte": rec + b"\x00",
        "label_10": bytes([10]) + rec[1:],
    }
    out = []
    for name, raw in cases.items():
        p = tmp_path / f"cifar-{name}.bin"
        p.write_bytes(raw)
        out.append((name, p))
    return out


def malformed_frames(raw, magic):
    """Corrupted variants of a well-formed checkpoint or mask file."""
    import hashlib

    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0x01
    wrong_version = bytearray(raw)
    wrong_version[4] = 9
    body = bytes(wrong_version[:-32])
    wrong_version = body + hashlib.sha256(body).digest()
    other = b"SIBM" if magic == b"SIBC" else b"SIBC"
    return {
        "empty": b"",
        "truncated_prefix": raw[:10],
        "truncated_digest": raw[:-1],
        "truncated_payload": raw[:-40] + raw[-32:],
        "wrong_magic": other + raw[4:],
        "flipped_bit": bytes(flipped),
        "wrong_version": wrong_version,
        "appended_byte": raw + b"\x00",
    }
