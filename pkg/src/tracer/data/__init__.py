from tracer.data.dataset import LabeledDataset, Normalization, load_digits_dataset, make_blobs
from tracer.data.idx import IdxFormatError, load_idx
from tracer.data.pgm import read_pgm, write_pgm, write_signed_pgm
from tracer.data.report import ExplanationReport, ReportError, load_report, save_report
from tracer.data.tabular import CsvFormatError, load_csv

__all__ = [
    "CsvFormatError", "ExplanationReport", "IdxFormatError", "LabeledDataset", "Normalization",
    "ReportError", "load_csv", "load_digits_dataset", "load_idx", "load_report", "make_blobs",
    "read_pgm", "save_report", "write_pgm", "write_signed_pgm",
]
