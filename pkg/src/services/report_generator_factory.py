"""
Фабрика для создания генераторов отчетов
"""
from typing import Optional

from .base import ReportGenerator, ReportType
from .html_generator import HTMLReportGenerator


class JSONReportGenerator(ReportGenerator):
    """JSON со стабильными именами полей; пустые столбцы опускаются"""

    def generate(self, report, title: Optional[str] = None) -> str:
        return report.to_json()


class ReportGeneratorFactory:
    """Фабрика для создания генераторов отчетов"""

    _generators = {
        ReportType.JSON: JSONReportGenerator,
        ReportType.HTML: HTMLReportGenerator,
    }

    @classmethod
    def create_generator(cls, report_type: ReportType) -> ReportGenerator:
        """Создает генератор отчетов указанного типа"""
        if report_type not in cls._generators:
            raise ValueError(f"Unsupported report type: {report_type}")
        return cls._generators[report_type]()
