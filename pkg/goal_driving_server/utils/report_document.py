"""
Word summary of an experiment: driving-time and collision tables.
"""

import logging
from typing import Optional, Sequence

from docx import Document
from docx.enum.style import WD_STYLE_TYPE
from docx.oxml import parse_xml
from docx.oxml.ns import nsdecls
from docx.oxml.shared import OxmlElement, qn
from docx.shared import Pt

from goal_driving_server.core.exceptions import ReportError
from goal_driving_server.utils.file_utils import check_file_writeable, ensure_extension

logger = logging.getLogger(__name__)

HEADER_SHADING = "D9E2F3"


def ensure_heading_style(doc):
    """
    Ensure Heading 1 and Heading 2 exist in the document.

    Args:
        doc: Document object
    """
    for level, size in ((1, 16), (2, 14)):
        style_name = f"Heading {level}"
        try:
            doc.styles[style_name]
        except KeyError:
            try:
                style = doc.styles.add_style(style_name, WD_STYLE_TYPE.PARAGRAPH)
                style.font.size = Pt(size)
                style.font.bold = True
            except Exception:
                # If style creation fails, we'll just use default formatting
                pass


def set_cell_border(cell, **kwargs):
    """
    Set cell border properties.

    Args:
        cell: The cell to modify
        **kwargs: Border sides (top, bottom, left, right) plus val, sz and color
    """
    tcPr = cell._tc.get_or_add_tcPr()
    tcBorders = tcPr.first_child_found_in("w:tcBorders")
    if tcBorders is None:
        tcBorders = OxmlElement("w:tcBorders")
        tcPr.append(tcBorders)
    for key in ("top", "left", "bottom", "right"):
        if not kwargs.get(key):
            continue
        element = OxmlElement(f"w:{key}")
        element.set(qn("w:val"), kwargs.get("val", "single"))
        element.set(qn("w:sz"), kwargs.get("sz", "4"))
        element.set(qn("w:space"), "0")
        element.set(qn("w:color"), kwargs.get("color", "auto"))
        tcBorders.append(element)


def apply_table_style(table, has_header_row: bool = True, border_style: str = "single", header_shading: Optional[str] = HEADER_SHADING) -> bool:
    """
    Bold and shade the header row and draw borders on every cell.

    Returns:
        True if successful, False otherwise
    """
    try:
        if has_header_row and table.rows:
            for cell in table.rows[0].cells:
                for paragraph in cell.paragraphs:
                    for run in paragraph.runs:
                        run.bold = True
                if header_shading:
                    cell._tc.get_or_add_tcPr().append(parse_xml(f'<w:shd {nsdecls("w")} w:fill="{header_shading}"/>'))

        val = {"none": "nil", "single": "single", "double": "double", "thick": "thick"}.get(border_style.lower(), "single")
        for row in table.rows:
            for cell in row.cells:
                set_cell_border(cell, top=True, bottom=True, left=True, right=True, val=val, color="000000")
        return True
    except Exception as e:
        logger.warning("Table styling failed: %s", str(e))
        return False


def add_table(doc, header: Sequence[str], rows: Sequence[Sequence[object]]):
    table = doc.add_table(rows=len(rows) + 1, cols=len(header))
    try:
        table.style = "Table Grid"
    except KeyError:
        # Borders are drawn by apply_table_style
        pass
    for j, text in enumerate(header):
        table.cell(0, j).text = str(text)
    for i, row in enumerate(rows, start=1):
        for j, value in enumerate(row):
            table.cell(i, j).text = str(value)
    apply_table_style(table)
    return table


def write_summary_document(
    path: str,
    title: str,
    sections: Sequence[tuple],
    notes: Sequence[str] = (),
) -> str:
    """
    Write a .docx summary.

    Args:
        path: Output file; .docx is appended when missing
        title: Document title
        sections: (heading, header, rows) triples, one table each
        notes: Paragraphs appended after the tables

    Raises:
        ReportError: the file cannot be written
    """
    path = ensure_extension(path, ".docx")
    ok, message = check_file_writeable(path)
    if not ok:
        raise ReportError(path, message)
    doc = Document()
    ensure_heading_style(doc)
    doc.add_heading(title, level=1)
    for heading, header, rows in sections:
        doc.add_heading(heading, level=2)
        if rows:
            add_table(doc, header, rows)
        else:
            doc.add_paragraph("No records.")
    for note in notes:
        doc.add_paragraph(note)
    try:
        doc.save(path)
    except Exception as e:
        raise ReportError(path, str(e)) from e
    return path
