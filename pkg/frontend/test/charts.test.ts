import { describe, expect, it } from "vitest";

import { barChart, lineChart } from "../src/charts.js";

describe("lineChart", () => {
  it("renders one path per series", () => {
    const svg = lineChart([
      { label: "regret", points: [{ x: 0, y: 2 }, { x: 1, y: 0 }], color: "#888" },
      { label: "rolling", points: [{ x: 0, y: 2 }, { x: 1, y: 1 }], color: "#0a6" },
    ]);
    expect(svg).toContain("<svg");
    expect((svg.match(/<path /g) ?? []).length).toBe(2);
    expect(svg).toContain('data-series="regret"');
  });

  it("shows an empty state without data", () => {
    const svg = lineChart([{ label: "regret", points: [], color: "#888" }]);
    expect(svg).toContain("no data yet");
  });
});

describe("barChart", () => {
  it("renders one rect per category with the raw value attached", () => {
    const svg = barChart([
      { label: "stay_in_mode", value: 0.5 },
      { label: "mode_level_change", value: -0.25 },
    ]);
    expect((svg.match(/<rect /g) ?? []).length).toBe(2);
    expect(svg).toContain('data-value="0.5"');
    expect(svg).toContain('data-value="-0.25"');
    expect(svg).toContain("bar neg");
  });

  it("escapes labels", () => {
    const svg = barChart([{ label: "<script>", value: 1 }]);
    expect(svg).not.toContain("<script>");
    expect(svg).toContain("&lt;script&gt;");
  });
});
