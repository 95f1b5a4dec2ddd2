// Dependency-free SVG chart builders. Pure string output, so tests can
// assert on structure without a browser.

export interface XY {
  x: number;
  y: number;
}

interface Scale {
  (v: number): number;
}

function linearScale(domainMin: number, domainMax: number, rangeMin: number, rangeMax: number): Scale {
  const span = domainMax - domainMin || 1;
  return (v: number) => rangeMin + ((v - domainMin) / span) * (rangeMax - rangeMin);
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function lineChart(
  series: { label: string; points: XY[]; color: string; dashed?: boolean }[],
  width = 640,
  height = 220,
): string {
  const pad = { left: 36, right: 10, top: 10, bottom: 24 };
  const all = series.flatMap((s) => s.points);
  if (all.length === 0) {
    return `<svg width="${width}" height="${height}" role="img"><text x="${width / 2}" y="${height / 2}" text-anchor="middle" class="empty">no data yet</text></svg>`;
  }
  const xMax = Math.max(...all.map((p) => p.x), 1);
  const yMax = Math.max(...all.map((p) => p.y), 1);
  const sx = linearScale(0, xMax, pad.left, width - pad.right);
  const sy = linearScale(0, yMax, height - pad.bottom, pad.top);

  const parts: string[] = [
    `<svg width="${width}" height="${height}" viewBox="0 0 ${width} ${height}" role="img">`,
    `<line x1="${pad.left}" y1="${sy(0)}" x2="${width - pad.right}" y2="${sy(0)}" class="axis"/>`,
    `<line x1="${pad.left}" y1="${pad.top}" x2="${pad.left}" y2="${height - pad.bottom}" class="axis"/>`,
    `<text x="${pad.left - 6}" y="${sy(0) + 4}" text-anchor="end" class="tick">0</text>`,
    `<text x="${pad.left - 6}" y="${sy(yMax) + 4}" text-anchor="end" class="tick">${yMax}</text>`,
    `<text x="${sx(xMax)}" y="${height - 6}" text-anchor="end" class="tick">${xMax}</text>`,
  ];
  for (const s of series) {
    if (s.points.length === 0) continue;
    const path = s.points
      .map((p, i) => `${i === 0 ? "M" : "L"}${sx(p.x).toFixed(1)},${sy(p.y).toFixed(1)}`)
      .join(" ");
    const dash = s.dashed ? ` stroke-dasharray="5,4"` : "";
    parts.push(`<path d="${path}" fill="none" stroke="${s.color}" stroke-width="1.6"${dash} data-series="${esc(s.label)}"/>`);
  }
  parts.push("</svg>");
  return parts.join("");
}

export function barChart(
  bars: { label: string; value: number }[],
  width = 640,
  rowHeight = 22,
): string {
  if (bars.length === 0) {
    return `<svg width="${width}" height="40" role="img"><text x="8" y="24" class="empty">no data yet</text></svg>`;
  }
  const labelWidth = 210;
  const height = bars.length * rowHeight + 8;
  const maxAbs = Math.max(...bars.map((b) => Math.abs(b.value)), 1e-9);
  const scale = (width - labelWidth - 60) / maxAbs;
  const parts = [`<svg width="${width}" height="${height}" viewBox="0 0 ${width} ${height}" role="img">`];
  bars.forEach((bar, i) => {
    const y = i * rowHeight + 4;
    const length = Math.abs(bar.value) * scale;
    const cls = bar.value >= 0 ? "bar pos" : "bar neg";
    parts.push(
      `<text x="${labelWidth - 8}" y="${y + rowHeight / 2 + 4}" text-anchor="end" class="tick">${esc(bar.label)}</text>`,
      `<rect x="${labelWidth}" y="${y}" width="${Math.max(length, 0.5).toFixed(1)}" height="${rowHeight - 8}" class="${cls}" data-category="${esc(bar.label)}" data-value="${bar.value}"/>`,
      `<text x="${labelWidth + length + 6}" y="${y + rowHeight / 2 + 4}" class="tick">${bar.value.toFixed(3)}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("");
}
