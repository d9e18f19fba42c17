"""
Генератор HTML отчетов об оценке
"""
from datetime import datetime
from typing import Optional

from jinja2 import Environment, StrictUndefined

from .base import ReportGenerator
from .constants import CSS_CLASSES, HTML_TEMPLATES

REPORT_TEMPLATE = """{{ doctype|safe }}
<html lang="ru">
<head>
    {{ meta_charset|safe }}
    {{ meta_viewport|safe }}
    <title>{{ title }}</title>
    <style>
        body { font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif; margin: 0; padding: 20px;
               background: #f5f5f5; color: #333; }
        .{{ css.container }} { max-width: 960px; margin: 0 auto; background: white; padding: 24px;
                               border-radius: 8px; box-shadow: 0 2px 10px rgba(0,0,0,0.1); }
        .{{ css.stats }} { display: flex; gap: 16px; flex-wrap: wrap; }
        .{{ css.stat_card }} { flex: 1; min-width: 140px; padding: 12px; background: #f8f9fa; border-radius: 6px; }
        .{{ css.stat_number }} { font-size: 1.6em; font-weight: bold; }
        .{{ css.stat_label }} { color: #666; font-size: 0.9em; }
        table { border-collapse: collapse; width: 100%; margin-top: 12px; }
        th, td { border: 1px solid #ddd; padding: 6px 10px; text-align: right; }
        .{{ css.positive }} { color: #1e7e34; }
        .{{ css.negative }} { color: #c82333; }
    </style>
</head>
<body>
<div class="{{ css.container }}">
    <h1>{{ title }}</h1>
    <p>Seed: {{ report.seed }} &middot; {{ generated_at }}</p>
    <div class="{{ css.stats }}">
    {% for name, value in columns.items() %}
        <div class="{{ css.stat_card }}">
            <div class="{{ css.stat_number }}">{{ "%.4f"|format(value) }}</div>
            <div class="{{ css.stat_label }}">{{ name }} macro F</div>
        </div>
    {% endfor %}
    </div>
    {% if report.per_class_delta is not none %}
    <h2>Per-class F delta</h2>
    <table>
        <tr><th>class</th>{% if report.baseline_per_class is not none %}<th>baseline F</th>{% endif %}<th>delta</th></tr>
        {% for delta in report.per_class_delta %}
        <tr>
            <td>{{ loop.index0 }}</td>
            {% if report.baseline_per_class is not none %}<td>{{ "%.4f"|format(report.baseline_per_class[loop.index0]) }}</td>{% endif %}
            <td class="{{ css.positive if delta >= 0 else css.negative }}">{{ "%+.4f"|format(delta) }}</td>
        </tr>
        {% endfor %}
    </table>
    {% endif %}
    {% if report.mean_margin is not none %}
    <h2>Smallest margin of generated samples</h2>
    <table>
        <tr><th>mean</th><th>median</th><th>fraction &le; &epsilon;</th></tr>
        <tr><td>{{ "%.4f"|format(report.mean_margin) }}</td><td>{{ "%.4f"|format(report.median_margin) }}</td>
            <td>{{ "%.4f"|format(report.frac_below_eps) }}</td></tr>
    </table>
    {% endif %}
    {% if report.counts %}
    <h2>Sample counts</h2>
    <table>
        {% for name, count in report.counts.items() %}<tr><th>{{ name }}</th><td>{{ count }}</td></tr>{% endfor %}
    </table>
    {% endif %}
</div>
</body>
</html>
"""


class HTMLReportGenerator(ReportGenerator):
    """HTML-страница с F-мерами, приростами по классам и статистикой отступов"""

    def __init__(self):
        self.environment = Environment(autoescape=True, undefined=StrictUndefined, trim_blocks=True,
                                       lstrip_blocks=True)
        self.template = self.environment.from_string(REPORT_TEMPLATE)

    def generate(self, report, title: Optional[str] = None) -> str:
        """Генерирует HTML отчет"""
        return self.template.render(
            doctype=HTML_TEMPLATES['DOCTYPE'],
            meta_charset=HTML_TEMPLATES['META_CHARSET'],
            meta_viewport=HTML_TEMPLATES['META_VIEWPORT'],
            css=CSS_CLASSES,
            title=title or "ActiveGAN evaluation report",
            generated_at=datetime.now().strftime('%d.%m.%Y %H:%M'),
            report=report,
            columns=report.f_columns,
        )
