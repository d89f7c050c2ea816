"""Metadata and value bit accounting for a pruned layer."""

from dataclasses import asdict, dataclass
from typing import Dict, Optional

from .layer import PrunedLayer
from .patterns import get_codec

DEFAULT_INDEX_BITS = 32


@dataclass(frozen=True)
class StorageReport:
    """Bit counts for storing one pruned layer.

    Structured metadata costs ``bits_per_block`` per block. The unstructured
    baseline stores one ``unstructured_index_bits`` coordinate per salient
    weight, the way a coordinate-list side matrix would.
    """

    rows: int
    cols: int
    value_bits: int
    residual_pattern: str
    residual_blocks: int
    residual_bits_per_block: int
    residual_metadata_bits: int
    residual_value_bits: int
    salient_pattern: Optional[str]
    salient_blocks: int
    salient_bits_per_block: int
    salient_metadata_bits: int
    salient_count: int
    salient_value_bits: int
    unstructured_index_bits: int
    unstructured_salient_metadata_bits: int

    @property
    def elements(self) -> int:
        return self.rows * self.cols

    def _per_element(self, bits: int) -> float:
        return bits / self.elements if self.elements else 0.0

    @property
    def residual_metadata_bits_per_element(self) -> float:
        return self._per_element(self.residual_metadata_bits)

    @property
    def salient_metadata_bits_per_element(self) -> float:
        return self._per_element(self.salient_metadata_bits)

    @property
    def metadata_bits_per_element(self) -> float:
        return self._per_element(self.residual_metadata_bits + self.salient_metadata_bits)

    @property
    def total_bits_per_element(self) -> float:
        return self._per_element(
            self.residual_metadata_bits
            + self.salient_metadata_bits
            + self.residual_value_bits
            + self.salient_value_bits
        )

    @property
    def unstructured_total_bits_per_element(self) -> float:
        return self._per_element(
            self.residual_metadata_bits
            + self.unstructured_salient_metadata_bits
            + self.residual_value_bits
            + self.salient_value_bits
        )

    @property
    def compression_ratio(self) -> float:
        """Dense storage over structured sparse storage."""
        total = self.total_bits_per_element
        return self.value_bits / total if total else 0.0

    def to_dict(self) -> Dict:
        data = asdict(self)
        for name in (
            "elements",
            "residual_metadata_bits_per_element",
            "salient_metadata_bits_per_element",
            "metadata_bits_per_element",
            "total_bits_per_element",
            "unstructured_total_bits_per_element",
            "compression_ratio",
        ):
            data[name] = getattr(self, name)
        return data


def metadata_bits_report(layer: PrunedLayer, unstructured_index_bits: int = DEFAULT_INDEX_BITS) -> StorageReport:
    """Count metadata and value bits for ``layer``.

    Examples
    --------
    A 2:4 residual without salient weights costs 3 bits per 4-block, 0.75
    bits per element; 8:16 costs 14 bits per 16-block, 0.875.
    """
    if unstructured_index_bits < 1:
        raise ValueError(f"unstructured_index_bits must be positive, got {unstructured_index_bits}")
    value_bits = layer.residual.dtype.itemsize * 8
    mask = layer.residual_mask
    codec = get_codec(mask.shape)

    salient_pattern = None
    salient_blocks = salient_bpb = salient_count = 0
    salient_value_bits = 0
    if layer.salient is not None:
        salient_mask = layer.salient.mask
        salient_pattern = str(salient_mask.shape)
        salient_blocks = salient_mask.block_count
        salient_bpb = get_codec(salient_mask.shape).bits_per_block
        salient_count = layer.salient.count
        salient_value_bits = salient_count * layer.salient.values.dtype.itemsize * 8

    return StorageReport(
        rows=layer.rows,
        cols=layer.cols,
        value_bits=value_bits,
        residual_pattern=str(mask.shape),
        residual_blocks=mask.block_count,
        residual_bits_per_block=codec.bits_per_block,
        residual_metadata_bits=mask.block_count * codec.bits_per_block,
        residual_value_bits=mask.kept_count * value_bits,
        salient_pattern=salient_pattern,
        salient_blocks=salient_blocks,
        salient_bits_per_block=salient_bpb,
        salient_metadata_bits=salient_blocks * salient_bpb,
        salient_count=salient_count,
        salient_value_bits=salient_value_bits,
        unstructured_index_bits=unstructured_index_bits,
        unstructured_salient_metadata_bits=salient_count * unstructured_index_bits,
    )
