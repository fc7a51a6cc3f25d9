from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import getSampleStyleSheet, ParagraphStyle
from reportlab.lib.units import inch
from reportlab.lib import colors
from reportlab.platypus import SimpleDocTemplate, Paragraph, Spacer, Table, TableStyle
from reportlab.lib.enums import TA_CENTER
from datetime import datetime
from typing import List, Optional

from schemas.experiment import RunSummary


class ReportGenerator:
    """Generate PDF summaries of experiment runs"""

    @staticmethod
    def generate_run_summary(
        summaries: List[RunSummary],
        output_path: str,
        notes: Optional[List[str]] = None
    ) -> str:
        """One table per run summary: per-task accuracy and final loss, mean ± std over repeats"""

        doc = SimpleDocTemplate(output_path, pagesize=letter,
                                rightMargin=0.75*inch, leftMargin=0.75*inch,
                                topMargin=0.75*inch, bottomMargin=0.75*inch)

        story = []
        styles = getSampleStyleSheet()

        title_style = ParagraphStyle(
            'CustomTitle',
            parent=styles['Heading1'],
            fontSize=22,
            textColor=colors.HexColor('#0A3D91'),
            spaceAfter=24,
            alignment=TA_CENTER
        )

        heading_style = ParagraphStyle(
            'CustomHeading',
            parent=styles['Heading2'],
            fontSize=14,
            textColor=colors.HexColor('#0A3D91'),
            spaceAfter=12,
            spaceBefore=12
        )

        story.append(Paragraph("EXPERIMENT SUMMARY", title_style))
        story.append(Paragraph(f"Generated {datetime.now().strftime('%B %d, %Y %H:%M')}", styles['Normal']))
        story.append(Spacer(1, 0.3*inch))

        for summary in summaries:
            story.append(Paragraph(f"{summary.name} ({summary.method.value}, lambda={summary.lam:g})", heading_style))

            info = [
                ["Dataset:", summary.dataset.value],
                ["Repeats:", str(summary.repeats)],
                ["Seeds:", ", ".join(str(s) for s in summary.seeds)],
                ["Wall time:", f"{summary.wall_seconds:.1f} s"],
                ["Negative transfer rate:",
                 f"{summary.negative_transfer_rate.mean:.4f} ± {summary.negative_transfer_rate.std:.4f}"],
            ]
            info_table = Table(info, colWidths=[2*inch, 4.5*inch])
            info_table.setStyle(TableStyle([
                ('FONT', (0, 0), (0, -1), 'Helvetica-Bold'),
                ('FONT', (1, 0), (1, -1), 'Helvetica'),
                ('FONTSIZE', (0, 0), (-1, -1), 10),
                ('BOTTOMPADDING', (0, 0), (-1, -1), 6),
            ]))
            story.append(info_table)
            story.append(Spacer(1, 0.15*inch))

            rows = [["Task", "Accuracy (%)", "Final loss"]]
            for task, loss in enumerate(summary.final_loss):
                if task < len(summary.accuracy):
                    acc = summary.accuracy[task]
                    acc_text = f"{100*acc.mean:.2f} ± {100*acc.std:.4f}"
                else:
                    acc_text = "n/a"
                rows.append([f"Task {task + 1}", acc_text, f"{loss.mean:.5f} ± {loss.std:.5f}"])

            metrics_table = Table(rows, colWidths=[1.5*inch, 2.5*inch, 2.5*inch])
            metrics_table.setStyle(TableStyle([
                ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor('#0A3D91')),
                ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
                ('ALIGN', (0, 0), (-1, -1), 'LEFT'),
                ('ALIGN', (1, 0), (-1, -1), 'RIGHT'),
                ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
                ('FONTSIZE', (0, 0), (-1, 0), 11),
                ('BOTTOMPADDING', (0, 0), (-1, 0), 10),
                ('GRID', (0, 0), (-1, -1), 1, colors.grey),
                ('FONTSIZE', (0, 1), (-1, -1), 10),
                ('ROWBACKGROUNDS', (0, 1), (-1, -1), [colors.white, colors.HexColor('#F5F5F5')])
            ]))
            story.append(metrics_table)
            story.append(Spacer(1, 0.3*inch))

        if notes:
            story.append(Paragraph("Notes", heading_style))
            for note in notes:
                story.append(Paragraph(f"• {note}", styles['Normal']))

        doc.build(story)
        return output_path
