import { describe, expect, it } from "vitest";

import { indicatorPolicy } from "../src/indicator.js";
import { initialView, reduce } from "../src/reducer.js";

describe("indicatorPolicy", () => {
  it("visible after status typing", () => {
    const view = reduce(initialView(), { type: "status", bot: "typing" }, 0);
    expect(indicatorPolicy(view, 50)).toBe("visible");
  });

  it("lingers briefly after idle, then hides", () => {
    let view = reduce(initialView(), { type: "status", bot: "typing" }, 0);
    view = reduce(view, { type: "status", bot: "idle" }, 1000);
    expect(indicatorPolicy(view, 1100)).toBe("visible");
    expect(indicatorPolicy(view, 1299)).toBe("visible");
    expect(indicatorPolicy(view, 1300)).toBe("hidden");
  });

  it("hidden when the connection is lost", () => {
    let view = reduce(initialView(), { type: "status", bot: "typing" }, 0);
    view = { ...view, connection: "lost" as const };
    expect(indicatorPolicy(view, 10)).toBe("hidden");
  });

  it("bot characters alone keep it visible", () => {
    const view = reduce(initialView(), { type: "bot_char", text_chunk: "y" }, 0);
    expect(indicatorPolicy(view, 10)).toBe("visible");
  });
});
