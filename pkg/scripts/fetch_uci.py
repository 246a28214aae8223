#!/usr/bin/env python3
"""Download the UCI datasets the shipped spec files expect.

Usage: python scripts/fetch_uci.py [DEST]

DEST defaults to $RENYIFAIR_DATA or ./data. Grabs Adult (adult.data,
adult.test), Bank Marketing (bank-full.csv out of bank.zip), and German
Credit (german.data). Nothing in the library downloads at run time; this
is a one-shot convenience script.
"""

import io
import os
import sys
import urllib.request
import zipfile

BASE = "https://archive.ics.uci.edu/ml/machine-learning-databases"
FILES = {
    "adult.data": f"{BASE}/adult/adult.data",
    "adult.test": f"{BASE}/adult/adult.test",
    "german.data": f"{BASE}/statlog/german/german.data",
}
BANK_ZIP = f"{BASE}/00222/bank.zip"


def main() -> int:
    dest = sys.argv[1] if len(sys.argv) > 1 else os.environ.get(
        "RENYIFAIR_DATA", os.path.join(os.getcwd(), "data"))
    os.makedirs(dest, exist_ok=True)
    for name, url in FILES.items():
        path = os.path.join(dest, name)
        if os.path.exists(path):
            print(f"exists: {path}")
            continue
        print(f"fetching {url}")
        with urllib.request.urlopen(url) as resp, open(path, "wb") as out:
            out.write(resp.read())
    bank_path = os.path.join(dest, "bank-full.csv")
    if not os.path.exists(bank_path):
        print(f"fetching {BANK_ZIP}")
        with urllib.request.urlopen(BANK_ZIP) as resp:
            payload = io.BytesIO(resp.read())
        with zipfile.ZipFile(payload) as zf, open(bank_path, "wb") as out:
            out.write(zf.read("bank-full.csv"))
    print(f"done; point RENYIFAIR_DATA at {dest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
