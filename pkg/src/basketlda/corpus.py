"""Transaction ingestion, basket corpus construction and train/test splits.

A basket is treated as a bag of product tokens: a line with quantity 3
contributes three tokens of that product.
"""

import csv
import datetime as dt
import hashlib
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse

from ._io import read_container, write_container

CORPUS_VERSION = "corpus-v1"
CSV_COLUMNS = ("basket_id", "date", "customer_id", "product_id", "quantity")


@dataclass(frozen=True)
class Transaction:
    basket_id: str
    date: Optional[dt.date]
    customer_id: Optional[str]
    product_id: str
    quantity: int


@dataclass
class RawTransactions:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class FilterConfig:
    """Popularity and basket-size thresholds.

    Products must sell strictly more than ``min_annual_units`` units and
    baskets must hold at least ``min_basket_size`` items.
    """

    min_annual_units: int = 50_000
    min_basket_size: int = 20

    def __post_init__(self):
        if self.min_annual_units < 0 or self.min_basket_size < 0:
            raise ValueError("filter thresholds must be nonnegative")


class Vocabulary:
    """Ordered product list with its inverse index."""

    def __init__(self, products):
        self.products = tuple(str(p) for p in products)
        self.index = {p: i for i, p in enumerate(self.products)}
        if len(self.index) != len(self.products):
            raise ValueError("duplicate product ids in vocabulary")

    @property
    def V(self):
        return len(self.products)

    def __len__(self):
        return len(self.products)

    def __getitem__(self, i):
        return self.products[i]

    def lookup(self, product_id):
        return self.index[product_id]

    def __contains__(self, product_id):
        return product_id in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.products == other.products

    def __hash__(self):
        return hash(self.products)

    def digest(self):
        """Stable sha256 of the ordered product ids (used to pair models with corpora)."""
        h = hashlib.sha256()
        for p in self.products:
            h.update(p.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def __repr__(self):
        return f"Vocabulary(V={self.V})"


@dataclass(frozen=True, eq=False)
class Basket:
    basket_id: str
    date: Optional[dt.date]
    customer_id: Optional[str]
    ids: np.ndarray
    counts: np.ndarray

    @property
    def size(self):
        return int(self.counts.sum())

    def tokens(self):
        """Expand counts to a flat token array (ids repeated by count)."""
        return np.repeat(self.ids, self.counts)


class BasketCorpus:
    """Immutable collection of baskets sharing one vocabulary."""

    def __init__(self, vocab, baskets):
        self.vocab = vocab
        self.baskets = tuple(baskets)
        V = vocab.V
        for b in self.baskets:
            if b.ids.size == 0 or b.counts.sum() <= 0:
                raise ValueError(f"basket {b.basket_id!r} is empty")
            if np.any(b.counts < 1):
                raise ValueError(f"basket {b.basket_id!r} has nonpositive counts")
            if b.ids.min() < 0 or b.ids.max() >= V:
                raise ValueError(f"basket {b.basket_id!r} has out-of-vocabulary indices")

    @property
    def D(self):
        return len(self.baskets)

    @property
    def V(self):
        return self.vocab.V

    def __len__(self):
        return len(self.baskets)

    def __iter__(self):
        return iter(self.baskets)

    def __getitem__(self, i):
        return self.baskets[i]

    def doc_lengths(self):
        return np.array([b.size for b in self.baskets], dtype=np.int64)

    def num_tokens(self):
        return int(sum(b.size for b in self.baskets))

    def product_counts(self):
        """Total token count per vocabulary product."""
        out = np.zeros(self.V, dtype=np.int64)
        for b in self.baskets:
            np.add.at(out, b.ids, b.counts)
        return out

    def to_csr(self):
        """D x V sparse count matrix."""
        indptr, indices, data = self._csr_parts()
        return sparse.csr_matrix((data, indices, indptr), shape=(self.D, self.V))

    def _csr_parts(self):
        lengths = [b.ids.size for b in self.baskets]
        indptr = np.zeros(self.D + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        if self.D:
            indices = np.concatenate([b.ids for b in self.baskets]).astype(np.int64)
            data = np.concatenate([b.counts for b in self.baskets]).astype(np.int64)
        else:
            indices = np.zeros(0, dtype=np.int64)
            data = np.zeros(0, dtype=np.int64)
        return indptr, indices, data

    def subset(self, indices):
        return BasketCorpus(self.vocab, [self.baskets[i] for i in indices])

    def basket_ids(self):
        return [b.basket_id for b in self.baskets]

    def has_dates(self):
        return all(b.date is not None for b in self.baskets)

    def has_customers(self):
        return any(b.customer_id is not None for b in self.baskets)

    def save(self, path):
        indptr, indices, data = self._csr_parts()
        header = {
            "products": list(self.vocab.products),
            "vocab_hash": self.vocab.digest(),
            "basket_ids": self.basket_ids(),
            "dates": [b.date.isoformat() if b.date else None for b in self.baskets],
            "customer_ids": [b.customer_id for b in self.baskets],
            "D": self.D,
            "V": self.V,
        }
        write_container(path, CORPUS_VERSION, header,
                        {"indptr": indptr, "indices": indices, "counts": data})

    @classmethod
    def load(cls, path):
        header, arrays = read_container(path, CORPUS_VERSION)
        vocab = Vocabulary(header["products"])
        if vocab.digest() != header["vocab_hash"]:
            raise ValueError(f"{path}: vocabulary hash mismatch")
        indptr, indices, data = arrays["indptr"], arrays["indices"], arrays["counts"]
        baskets = []
        for d, bid in enumerate(header["basket_ids"]):
            lo, hi = indptr[d], indptr[d + 1]
            date = header["dates"][d]
            baskets.append(Basket(
                bid,
                dt.date.fromisoformat(date) if date else None,
                header["customer_ids"][d],
                indices[lo:hi].copy(),
                data[lo:hi].copy(),
            ))
        return cls(vocab, baskets)

    def __repr__(self):
        return f"BasketCorpus(D={self.D}, V={self.V}, tokens={self.num_tokens()})"


def make_basket(basket_id, product_counts, date=None, customer_id=None):
    """Build a basket from a ``{product_index: count}`` mapping, ids sorted."""
    items = sorted((int(k), int(v)) for k, v in product_counts.items() if v)
    ids = np.array([k for k, _ in items], dtype=np.int64)
    counts = np.array([v for _, v in items], dtype=np.int64)
    return Basket(basket_id, date, customer_id, ids, counts)


# -- ingestion ---------------------------------------------------------------

def _parse_record(row, line):
    def text(name):
        val = row.get(name)
        if val is None:
            return ""
        return str(val).strip()

    basket_id = text("basket_id")
    if not basket_id:
        raise ValueError(f"basket_id must be nonempty (line {line})")
    product_id = text("product_id")
    if not product_id:
        raise ValueError(f"product_id must be nonempty (line {line})")
    raw_date = text("date")
    date = None
    if raw_date:
        try:
            date = dt.date.fromisoformat(raw_date)
        except ValueError:
            raise ValueError(f"invalid date {raw_date!r} in field 'date' (line {line})") from None
    customer_id = text("customer_id") or None
    raw_qty = row.get("quantity")
    try:
        if isinstance(raw_qty, bool):
            raise TypeError
        if isinstance(raw_qty, (int, float)) and not isinstance(raw_qty, bool):
            if float(raw_qty) != int(raw_qty):
                raise TypeError
            quantity = int(raw_qty)
        else:
            quantity = int(str(raw_qty).strip())
    except (TypeError, ValueError):
        raise ValueError(f"invalid quantity {raw_qty!r} in field 'quantity' (line {line})") from None
    if quantity < 1:
        raise ValueError(f"quantity must be ≥ 1 (line {line})")
    return Transaction(basket_id, date, customer_id, product_id, quantity)


def ingest_transactions(source, format="csv"):
    """Parse a UTF-8 CSV or JSONL transaction stream.

    Parameters
    ----------
    source : binary file object, bytes or str
        The raw input.
    format : {"csv", "jsonl"}

    Returns
    -------
    RawTransactions
        One record per row, input order preserved.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown transaction format {format!r} (expected csv or jsonl)")
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    if isinstance(source, str):
        text = io.StringIO(source)
    else:
        text = io.TextIOWrapper(source, encoding="utf-8", newline="")
    try:
        if format == "csv":
            return _ingest_csv(text)
        return _ingest_jsonl(text)
    except UnicodeDecodeError as exc:
        raise ValueError(f"input is not valid UTF-8: {exc}") from None
    finally:
        if isinstance(text, io.TextIOWrapper):
            text.detach()


def _ingest_csv(text):
    reader = csv.DictReader(text)
    records = []
    if reader.fieldnames is None:
        return RawTransactions(records)
    missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise ValueError(f"CSV header missing columns {missing} (line 1)")
    for row in reader:
        if None in row:
            raise ValueError(f"too many fields (line {reader.line_num})")
        if all(v in (None, "") for v in row.values()):
            continue
        records.append(_parse_record(row, reader.line_num))
    return RawTransactions(records)


def _ingest_jsonl(text):
    records = []
    for lineno, line in enumerate(text, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed JSON: {exc.msg} (line {lineno})") from None
        if not isinstance(obj, dict):
            raise ValueError(f"expected a JSON object (line {lineno})")
        records.append(_parse_record(obj, lineno))
    return RawTransactions(records)


def load_transactions(path, format=None):
    """Read transactions from ``path``; format inferred from the suffix if omitted."""
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "csv"
    with open(path, "rb") as fh:
        return ingest_transactions(fh, format)


# -- corpus construction -----------------------------------------------------

def build_corpus(raw, filter=None):
    """Filter transactions and build a :class:`BasketCorpus`.

    Unpopular products are dropped first, then small baskets. The two
    filters are re-applied until neither removes anything, so a corpus
    built from already-filtered records comes back unchanged. The
    vocabulary holds the surviving products sorted by id.
    """
    filter = filter or FilterConfig()
    if len(raw) == 0:
        raise ValueError("no transactions to build a corpus from")

    contents = {}
    meta = {}
    for rec in raw:
        if rec.basket_id not in meta:
            meta[rec.basket_id] = (rec.date, rec.customer_id)
            contents[rec.basket_id] = Counter()
        elif meta[rec.basket_id] != (rec.date, rec.customer_id):
            raise ValueError(
                f"basket {rec.basket_id!r} has conflicting date/customer across records"
            )
        contents[rec.basket_id][rec.product_id] += rec.quantity

    alive = dict(contents)
    while True:
        totals = Counter()
        for items in alive.values():
            totals.update(items)
        popular = {p for p, n in totals.items() if n > filter.min_annual_units}
        survivors = {}
        for bid, items in alive.items():
            kept = Counter({p: n for p, n in items.items() if p in popular})
            size = sum(kept.values())
            if size > 0 and size >= filter.min_basket_size:
                survivors[bid] = kept
        stable = len(survivors) == len(alive) and all(
            survivors[b] == alive[b] for b in survivors)
        alive = survivors
        if stable or not alive:
            break
    if not alive:
        raise ValueError("empty corpus after filtering")

    products = sorted({p for items in alive.values() for p in items})
    vocab = Vocabulary(products)
    baskets = []
    for bid, items in alive.items():
        date, customer = meta[bid]
        baskets.append(make_basket(
            bid, {vocab.index[p]: n for p, n in items.items()}, date, customer))
    return BasketCorpus(vocab, baskets)


def split_corpus(corpus, holdout_fraction, seed):
    """Randomly partition baskets into ``(train, test)``.

    ``round(holdout_fraction * D)`` baskets go to the test side; both halves
    share ``corpus.vocab``. Basket order within each half follows the
    original corpus.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction must lie in (0, 1), got {holdout_fraction}")
    D = corpus.D
    if D < 2:
        raise ValueError("need at least 2 baskets to split")
    n_test = int(np.floor(holdout_fraction * D + 0.5))
    if n_test == 0 or n_test == D:
        raise ValueError(
            f"holdout_fraction {holdout_fraction} leaves an empty side with D={D}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(D)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return corpus.subset(train_idx), corpus.subset(test_idx)
