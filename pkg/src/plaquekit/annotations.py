"""Annotation parsing and polygon geometry.

Annotations live in a minimal XML schema (see docs/annotation_schema.md):
a root ``<annotations wsi="...">`` holds one ``<roi>`` element per outline,
each with ordered ``<vertex x="" y=""/>`` children in level-0 pixel
coordinates. All persisted coordinates are level-0 pixels; conversion to a
working level is always explicit through :func:`scale_to_level`.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from plaquekit.errors import (
    DegeneratePolygon,
    MalformedXml,
    OutOfBounds,
    SchemaViolation,
    UnknownLevel,
)

DEGENERATE_AREA_PX2 = 1e-9


class Scanner(str, Enum):
    NANOZOOMER_2RS = "NanoZoomer2RS"
    NANOZOOMER_S60 = "NanoZoomerS60"


#: Level-0 resolution each scanner model produces, in nm per pixel.
SCANNER_RESOLUTION_NM = {
    Scanner.NANOZOOMER_2RS: 227.0,
    Scanner.NANOZOOMER_S60: 221.0,
}


@dataclass(frozen=True)
class WsiRecord:
    """Metadata for one whole-slide image pyramid.

    ``level_dimensions`` lists (width, height) per level, level 0 first,
    strictly decreasing by roughly 2x per level.
    """

    wsi_id: str
    image_path: Path
    scanner: Scanner
    resolution_nm_per_px: float
    base_magnification: float
    level_count: int
    level_dimensions: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.resolution_nm_per_px <= 0:
            raise ValueError(f"{self.wsi_id}: resolution must be positive")
        if self.base_magnification <= 0:
            raise ValueError(f"{self.wsi_id}: magnification must be positive")
        if self.level_count != len(self.level_dimensions):
            raise ValueError(
                f"{self.wsi_id}: level_count {self.level_count} != "
                f"{len(self.level_dimensions)} level dimensions"
            )
        if self.level_count < 1:
            raise ValueError(f"{self.wsi_id}: need at least one level")
        for lv, ((w0, h0), (w1, h1)) in enumerate(
            zip(self.level_dimensions, self.level_dimensions[1:])
        ):
            rw, rh = w0 / w1, h0 / h1
            if not (1.5 <= rw <= 2.5 and 1.5 <= rh <= 2.5):
                raise ValueError(
                    f"{self.wsi_id}: levels {lv}->{lv + 1} shrink by "
                    f"({rw:.2f}, {rh:.2f}), expected ~2x"
                )
        expected = SCANNER_RESOLUTION_NM.get(self.scanner)
        if expected is not None and abs(self.resolution_nm_per_px - expected) > 1e-6:
            raise ValueError(
                f"{self.wsi_id}: {self.scanner.value} scans at {expected} nm/px, "
                f"got {self.resolution_nm_per_px}"
            )

    @property
    def width(self) -> int:
        return self.level_dimensions[0][0]

    @property
    def height(self) -> int:
        return self.level_dimensions[0][1]


@dataclass(frozen=True)
class PolygonRoi:
    """One annotated outline in level-0 pixel coordinates.

    Vertices are stored in canonical orientation (positive shoelace sum);
    parsing and construction helpers enforce this.
    """

    roi_id: str
    wsi_id: str
    label: str
    vertices: tuple[tuple[float, float], ...]
    closed: bool = True

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise SchemaViolation(f"{self.roi_id}: polygon needs >= 3 vertices")
        n = len(self.vertices)
        for i in range(n):
            if self.vertices[i] == self.vertices[(i + 1) % n]:
                raise SchemaViolation(
                    f"{self.roi_id}: consecutive duplicate vertex at index {i}"
                )
        if abs(signed_area(self.vertices)) < DEGENERATE_AREA_PX2:
            raise DegeneratePolygon(f"{self.roi_id}: degenerate polygon")

    @classmethod
    def create(
        cls,
        roi_id: str,
        wsi_id: str,
        label: str,
        vertices: Sequence[tuple[float, float]],
        closed: bool = True,
    ) -> "PolygonRoi":
        """Construct with canonical orientation applied."""
        verts = tuple((float(x), float(y)) for x, y in vertices)
        if len(verts) >= 3 and signed_area(verts) < 0:
            verts = verts[::-1]
        return cls(roi_id, wsi_id, label, verts, closed)

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)


def signed_area(vertices: Sequence[tuple[float, float]]) -> float:
    """Shoelace sum / 2; sign encodes orientation."""
    acc = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return acc / 2.0


def polygon_area(roi: PolygonRoi) -> float:
    """Absolute polygon area in px^2 at level 0, orientation-independent."""
    area = abs(signed_area(roi.vertices))
    if area < DEGENERATE_AREA_PX2:
        raise DegeneratePolygon(f"{roi.roi_id}: area below {DEGENERATE_AREA_PX2} px^2")
    return area


def polygon_centroid(roi: PolygonRoi) -> tuple[float, float]:
    """Area-weighted centroid of the polygon."""
    a = signed_area(roi.vertices)
    cx = cy = 0.0
    n = len(roi.vertices)
    for i in range(n):
        x0, y0 = roi.vertices[i]
        x1, y1 = roi.vertices[(i + 1) % n]
        cross = x0 * y1 - x1 * y0
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
    return cx / (6.0 * a), cy / (6.0 * a)


def parse_annotation_file(xml_text: str, wsi: WsiRecord) -> list[PolygonRoi]:
    """Parse annotation XML into ROIs bound to ``wsi``.

    Vertices are preserved in file order, then canonical orientation is
    applied (order reversed when the shoelace sum is negative). Every ROI is
    validated against the level-0 extent of ``wsi``.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise MalformedXml(f"unparseable annotation XML: {exc}") from exc
    if root.tag != "annotations":
        raise SchemaViolation(f"root element must be <annotations>, got <{root.tag}>")
    file_wsi = root.get("wsi")
    if file_wsi is not None and file_wsi != wsi.wsi_id:
        raise SchemaViolation(
            f"annotation file targets wsi '{file_wsi}', expected '{wsi.wsi_id}'"
        )

    rois: list[PolygonRoi] = []
    for idx, el in enumerate(root.findall("roi")):
        roi_id = el.get("id")
        if not roi_id:
            raise SchemaViolation(f"roi element #{idx} missing id attribute")
        label = el.get("label", "")
        closed = el.get("closed", "true").lower() != "false"
        verts: list[tuple[float, float]] = []
        for v in el.findall("vertex"):
            xs, ys = v.get("x"), v.get("y")
            if xs is None or ys is None:
                raise SchemaViolation(f"{roi_id}: vertex missing x/y attribute")
            try:
                verts.append((float(xs), float(ys)))
            except ValueError as exc:
                raise SchemaViolation(f"{roi_id}: non-numeric vertex") from exc
        if len(verts) < 3:
            raise SchemaViolation(f"{roi_id}: found {len(verts)} vertices, need >= 3")
        for x, y in verts:
            if not (0.0 <= x <= wsi.width and 0.0 <= y <= wsi.height):
                raise OutOfBounds(
                    f"{roi_id}: vertex ({x}, {y}) outside level-0 extent "
                    f"{wsi.width}x{wsi.height}"
                )
        rois.append(PolygonRoi.create(roi_id, wsi.wsi_id, label, verts, closed))
    return rois


def write_annotation_file(rois: Iterable[PolygonRoi], wsi_id: str) -> str:
    """Emit annotation XML in the documented schema (round-trips with the parser)."""
    root = ET.Element("annotations", wsi=wsi_id)
    for roi in rois:
        el = ET.SubElement(
            root,
            "roi",
            id=roi.roi_id,
            label=roi.label,
            closed="true" if roi.closed else "false",
        )
        for x, y in roi.vertices:
            ET.SubElement(el, "vertex", x=repr(x), y=repr(y))
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def scale_to_level(
    roi: PolygonRoi, from_level: int, to_level: int, wsi: WsiRecord
) -> PolygonRoi:
    """Rescale vertices between pyramid levels of ``wsi``.

    The per-axis factor is the ratio of level dimensions, so the area scales
    by that ratio squared.
    """
    for level in (from_level, to_level):
        if not (0 <= level < wsi.level_count):
            raise UnknownLevel(f"{wsi.wsi_id}: level {level} not in pyramid")
    if from_level == to_level:
        return roi
    (fw, fh) = wsi.level_dimensions[from_level]
    (tw, th) = wsi.level_dimensions[to_level]
    sx, sy = tw / fw, th / fh
    verts = tuple((x * sx, y * sy) for x, y in roi.vertices)
    return replace(roi, vertices=verts)


def load_metadata_sidecar(path: Path) -> WsiRecord:
    """Read the key-value ``metadata.txt`` sidecar of a WSI container directory."""
    fields: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        dims = tuple(
            tuple(int(d) for d in pair.split("x")) for pair in fields["level_dimensions"].split(";")
        )
        return WsiRecord(
            wsi_id=fields["wsi_id"],
            image_path=Path(path).parent,
            scanner=Scanner(fields["scanner"]),
            resolution_nm_per_px=float(fields["resolution_nm_per_px"]),
            base_magnification=float(fields["base_magnification"]),
            level_count=int(fields["level_count"]),
            level_dimensions=dims,  # type: ignore[arg-type]
        )
    except KeyError as exc:
        raise SchemaViolation(f"{path}: sidecar missing field {exc}") from exc


def write_metadata_sidecar(wsi: WsiRecord, path: Path) -> None:
    dims = ";".join(f"{w}x{h}" for w, h in wsi.level_dimensions)
    text = (
        f"wsi_id={wsi.wsi_id}\n"
        f"scanner={wsi.scanner.value}\n"
        f"resolution_nm_per_px={wsi.resolution_nm_per_px}\n"
        f"base_magnification={wsi.base_magnification}\n"
        f"level_count={wsi.level_count}\n"
        f"level_dimensions={dims}\n"
    )
    Path(path).write_text(text)
