"""Static reports, multi-run comparison, the report archive and the live view.

Submodules: :mod:`~qcal.report.html` (generate_report),
:mod:`~qcal.report.compare` (compare_reports), :mod:`~qcal.report.archive`
(upload_report, serve_archive) and :mod:`~qcal.report.live` (serve_live).
"""
