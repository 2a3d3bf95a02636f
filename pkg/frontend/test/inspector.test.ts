import { beforeEach, describe, expect, it } from "vitest";

import { AlertdClient } from "../src/api";
import { SceneInspector } from "../src/inspector";
import { LAYERS } from "../src/types";
import { installMockAlertd, makeAlert } from "./mockServer";

const SCENE = "site_a:20240105T060000";

function fixture() {
  const target = makeAlert({
    alert_id: "target", scene_id: SCENE, site_id: "site_a",
    timestamp: "2024-01-05T06:00:00", scene_score: 0.88, flux_kg_h: 1234.5,
  });
  const history = [
    makeAlert({ alert_id: "h1", site_id: "site_a", timestamp: "2024-01-01T06:00:00", scene_score: 0.2 }),
    makeAlert({ alert_id: "h2", site_id: "site_a", timestamp: "2024-01-03T06:00:00", scene_score: 0.4 }),
    makeAlert({ alert_id: "h3", site_id: "site_a", timestamp: "2024-01-04T06:00:00", scene_score: 0.1 }),
    makeAlert({ alert_id: "other", site_id: "site_b", timestamp: "2024-01-02T06:00:00" }),
  ];
  const mask = [
    [0, 0, 0, 0],
    [0, 1, 1, 0],
    [0, 1, 1, 0],
    [0, 0, 0, 0],
  ];
  return { target, history, mask };
}

describe("scene inspector", () => {
  let root: HTMLElement;

  beforeEach(() => {
    document.body.innerHTML = "<div id='root'></div>";
    root = document.getElementById("root")!;
  });

  async function openInspector() {
    const { target, history, mask } = fixture();
    const state = installMockAlertd([target, ...history], { [SCENE]: mask });
    const inspector = new SceneInspector(root, new AlertdClient(), target, {
      onClose: () => {},
      onChanged: () => {},
    });
    await inspector.open();
    return { inspector, state, target };
  }

  it("layer toggles fetch all five layer endpoints", async () => {
    const { inspector, state } = await openInspector();
    for (const layer of LAYERS) {
      await inspector.showLayer(layer);
    }
    const layerRequests = state.requests
      .map((r) => r.url)
      .filter((u) => u.includes("/layers/"));
    for (const layer of LAYERS) {
      expect(layerRequests.some((u) => u.endsWith(`/layers/${layer}`)), layer).toBe(true);
    }
    const image = root.querySelector<HTMLImageElement>(".layer-image")!;
    expect(image.getAttribute("src")).toContain("/layers/mask");
  });

  it("layer toggling never mutates the mask data", async () => {
    const { inspector } = await openInspector();
    const before = JSON.stringify(inspector.currentMask);
    await inspector.showLayer("prob");
    await inspector.showLayer("dch4");
    expect(JSON.stringify(inspector.currentMask)).toBe(before);
  });

  it("shows the overpass history for the same site in time order", async () => {
    await openInspector();
    const items = [...root.querySelectorAll(".history-strip li")];
    const ids = items.map((li) => (li as HTMLElement).dataset.alertId);
    expect(ids).toEqual(["h1", "h2", "h3", "target"]);
    expect(ids).not.toContain("other");
  });

  it("missing layer leaves a placeholder instead of crashing", async () => {
    const { inspector, state } = await openInspector();
    const realFetch = globalThis.fetch;
    (globalThis as any).fetch = async (input: RequestInfo | URL, init?: RequestInit) => {
      const url = String(input);
      if (url.includes("/layers/dch4")) return new Response("missing", { status: 404 });
      return (realFetch as any)(input, init);
    };
    await inspector.showLayer("dch4");
    const image = root.querySelector<HTMLImageElement>(".layer-image")!;
    expect(image.getAttribute("src")).toBeNull();
    expect(image.alt).toContain("unavailable");
    expect(state.requests.length).toBeGreaterThan(0);
  });

  it("validate with an edited mask round-trips and refreshes the flux", async () => {
    const { inspector, state } = await openInspector();
    // brush one extra pixel onto the 4x4 mask
    const canvas = root.querySelector<HTMLCanvasElement>(".mask-editor")!;
    canvas.dispatchEvent(new MouseEvent("click", { clientX: 0, clientY: 0 }));
    expect(inspector.currentMask![0][0]).toBe(1);

    await inspector.transition("inspecting");
    const post = state.requests.findLast((r) => r.method === "POST")!;
    const posted = (post.body as any).edited_mask as number[][];
    expect(posted[0][0]).toBe(1);
    expect(posted.flat().reduce((a, b) => a + b, 0)).toBe(5);
    // server requantified: 5 pixels -> flux 50 in the mock convention
    expect(root.querySelector(".flux-panel")!.textContent).toContain("50.0");
    // the mask echoed back by the server equals the submitted annotation
    expect(state.masks[SCENE]).toEqual(posted);
  });

  it("stale version rolls back and prompts a refresh", async () => {
    const { inspector, state, target } = await openInspector();
    // another analyst moved the alert meanwhile
    const row = state.alerts.find((a) => a.alert_id === target.alert_id)!;
    row.status = "inspecting";
    row.version = 3;

    await inspector.transition("inspecting");
    const badge = root.querySelector(".badge.status")!;
    expect(badge.textContent).toBe("inspecting"); // refreshed server state, not "validated"
    expect(root.querySelector<HTMLElement>(".conflict-note")!.hidden).toBe(false);
  });

  it("status badge updates optimistically on success", async () => {
    const { inspector } = await openInspector();
    await inspector.transition("inspecting");
    expect(root.querySelector(".badge.status")!.textContent).toBe("inspecting");
    await inspector.transition("validated");
    expect(root.querySelector(".badge.status")!.textContent).toBe("validated");
  });
});
