import csv
import hashlib
import json
import os
import tempfile

import numpy as np


def make_rng(seed):
    """Build a numpy Generator from an int, a tuple of ints, a SeedSequence
    or an existing Generator (returned as-is).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng(np.random.SeedSequence(
            [int(p) for p in seed],
        ))
    return np.random.default_rng(seed)


def derive_seed(*parts):
    """Derive a 32-bit seed from ints and strings.

    Strings (e.g. genome hashes) are folded in through SHA-256 so the result
    does not depend on Python's per-process hash randomization.
    """
    entropy = []
    for part in parts:
        if isinstance(part, str):
            digest = hashlib.sha256(part.encode('utf-8')).digest()
            entropy.append(int.from_bytes(digest[:8], 'little'))
        else:
            entropy.append(int(part))
    seq = np.random.SeedSequence(entropy)
    return int(seq.generate_state(1)[0])


def text_digest(text, length=16):
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:length]


def dump_json(data):
    return json.dumps(data, indent=2, sort_keys=True) + '\n'


def atomic_write(path, content):
    """Write text to path through a temporary file in the same directory.

    Readers never observe a half-written checkpoint this way.
    """
    container = os.path.dirname(os.path.abspath(path))
    os.makedirs(container, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=container, prefix='.tmp-')
    try:
        with os.fdopen(fd, 'w', newline='') as f:
            f.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class CSVLedger(object):
    """An append-only CSV file with a fixed header.
    """
    def __init__(self, path, fields):
        self.path = path
        self.fields = list(fields)

    def reset(self):
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        with open(self.path, 'w', newline='') as f:
            csv.writer(f, lineterminator='\n').writerow(self.fields)

    def append(self, rows):
        if not os.path.exists(self.path):
            self.reset()
        with open(self.path, 'a', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            for row in rows:
                writer.writerow([_format_cell(row[k]) for k in self.fields])

    def read(self):
        if not os.path.exists(self.path):
            return []
        with open(self.path, newline='') as f:
            return list(csv.DictReader(f))

    def truncate(self, keep):
        """Rewrite the ledger keeping only rows for which `keep(row)` holds.
        """
        rows = [r for r in self.read() if keep(r)]
        self.reset()
        self.append(rows)


def _format_cell(value):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])
