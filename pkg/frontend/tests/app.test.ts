import { beforeEach, describe, expect, it, vi } from "vitest";

import type { FetchFn } from "../src/api.js";
import { CalculatorApp } from "../src/app.js";
import { SCHEMA, makeResponse } from "./fixtures.js";

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

type PredictHandler = (payload: Record<string, unknown>)
  => Response | Promise<Response>;

function fakeService(predict: PredictHandler) {
  const calls: Record<string, unknown>[] = [];
  const fetchFn: FetchFn = async (input, init) => {
    const url = String(input);
    if (url.endsWith("/api/v1/schema")) {
      return json(200, SCHEMA);
    }
    if (url.endsWith("/api/v1/predict")) {
      const payload = JSON.parse(String(init?.body)) as
        Record<string, unknown>;
      calls.push(payload);
      return predict(payload);
    }
    return json(404, { error: "nothing here" });
  };
  return { fetchFn, calls };
}

function deferred<T>() {
  let resolve!: (value: T) => void;
  let reject!: (reason: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  root = document.getElementById("app")!;
});

async function mount(predict: PredictHandler) {
  const { fetchFn, calls } = fakeService(predict);
  const app = new CalculatorApp(root, { fetchFn });
  await app.start();
  return { app, calls };
}

function changeToggle(name: string, checked: boolean) {
  const toggle = root.querySelector<HTMLInputElement>(
    `.unknown-toggle[data-field="${name}"]`)!;
  toggle.checked = checked;
  toggle.dispatchEvent(new Event("change", { bubbles: true }));
}

function changeInput(name: string, value: string) {
  const input = root.querySelector<HTMLInputElement>(
    `input.control[data-field="${name}"]`)!;
  input.value = value;
  input.dispatchEvent(new Event("change", { bubbles: true }));
}

describe("startup", () => {
  it("renders the fetched schema as a form", async () => {
    await mount(() => json(200, makeResponse()));
    expect(root.querySelectorAll(".field"))
      .toHaveLength(SCHEMA.fields.length);
    expect(root.querySelector("button.submit")).not.toBeNull();
  });

  it("shows a blocking panel when the schema fetch fails, then recovers",
    async () => {
      let healthy = false;
      const fetchFn: FetchFn = async (input) => {
        if (!healthy) {
          throw new Error("connection refused");
        }
        expect(String(input)).toContain("/api/v1/schema");
        return json(200, SCHEMA);
      };
      const app = new CalculatorApp(root, { fetchFn });
      await app.start();
      expect(root.querySelector(".schema-error")).not.toBeNull();
      expect(root.querySelector("form.predictors")).toBeNull();

      healthy = true;
      root.querySelector<HTMLButtonElement>(".schema-error .retry")!.click();
      await vi.waitFor(() => {
        expect(root.querySelector("form.predictors")).not.toBeNull();
      });
    });
});

describe("request assembly from the form", () => {
  it("sends only the fields the user filled in", async () => {
    const { app, calls } = await mount(() => json(200, makeResponse()));
    changeToggle("bmi", false);
    changeInput("bmi", "24.5");
    const select = root.querySelector<HTMLSelectElement>(
      'select[data-field="sex"]')!;
    select.value = "female";
    select.dispatchEvent(new Event("change", { bubbles: true }));
    await app.submit();
    expect(calls).toEqual([{ bmi: 24.5, sex: "female" }]);
  });

  it("sends an empty object for an untouched form", async () => {
    const { app, calls } = await mount(() => json(200, makeResponse()));
    await app.submit();
    expect(calls).toEqual([{}]);
  });

  it("returning a control to unknown removes its key", async () => {
    const { app, calls } = await mount(() => json(200, makeResponse()));
    changeToggle("bmi", false);
    changeInput("bmi", "24.5");
    changeToggle("bmi", true);
    await app.submit();
    expect(calls).toEqual([{}]);
  });

  it("blocks submission on a non-numeric value", async () => {
    const { app, calls } = await mount(() => json(200, makeResponse()));
    app.setField("age_years", "old");
    await app.submit();
    expect(calls).toEqual([]);
    const field = root.querySelector('[data-field="age_years"].field')!;
    expect(field.querySelector(".message")!.textContent)
      .toBe("enter a number");
  });
});

describe("submit lifecycle", () => {
  it("submits through the form and renders the result card", async () => {
    await mount(() => json(200, makeResponse({ predicted_minutes: 96.7 })));
    root.querySelector<HTMLFormElement>("form.predictors")!
      .dispatchEvent(new Event("submit", { bubbles: true, cancelable: true }));
    await vi.waitFor(() => {
      expect(root.querySelector(".minutes")!.textContent).toBe("97 min");
    });
  });

  it("disables submit while the request is in flight", async () => {
    const gate = deferred<Response>();
    const { app } = await mount(() => gate.promise);
    const inFlight = app.submit();
    const button = root.querySelector<HTMLButtonElement>("button.submit")!;
    expect(button.disabled).toBe(true);
    expect(app.getState().pending).toBe(true);
    gate.resolve(json(200, makeResponse()));
    await inFlight;
    expect(root.querySelector<HTMLButtonElement>("button.submit")!.disabled)
      .toBe(false);
    expect(root.querySelectorAll(".result-card")).toHaveLength(1);
  });

  it("keeps the previous result for side-by-side comparison", async () => {
    const { app } = await mount((payload) => json(200, makeResponse({
      predicted_minutes: 100 + Number(payload.bmi ?? 0),
    })));
    changeToggle("bmi", false);
    changeInput("bmi", "10");
    await app.submit();
    changeInput("bmi", "40");
    await app.submit();
    const cards = root.querySelectorAll(".result-card");
    expect(cards).toHaveLength(2);
    expect(cards[0].querySelector(".minutes")!.textContent).toBe("140 min");
    expect(cards[1].querySelector(".minutes")!.textContent).toBe("110 min");
  });

  it("discards a stale response superseded by a newer submit", async () => {
    const gates = [deferred<Response>(), deferred<Response>()];
    let call = 0;
    const { app } = await mount(() => gates[call++].promise);
    const first = app.submit();
    const second = app.submit();
    gates[1].resolve(json(200, makeResponse({ predicted_minutes: 130 })));
    await second;
    gates[0].resolve(json(200, makeResponse({ predicted_minutes: 100 })));
    await first;
    const state = app.getState();
    expect(state.results).toHaveLength(1);
    expect(state.results[0].response.predicted_minutes).toBe(130);
    expect(root.querySelector(".minutes")!.textContent).toBe("130 min");
  });

  it("maps a 400 rejection onto the offending field", async () => {
    const { app } = await mount(() => json(400, {
      errors: [{ field: "bmi", message: "must be a positive number" }],
    }));
    changeToggle("bmi", false);
    changeInput("bmi", "-3");
    await app.submit();
    const field = root.querySelector('[data-field="bmi"].field')!;
    expect(field.querySelector(".message")!.textContent)
      .toBe("must be a positive number");
    expect(root.querySelector(".banner")).toBeNull();
    expect(root.querySelectorAll(".result-card")).toHaveLength(0);
  });

  it("shows a retryable banner on network failure", async () => {
    let healthy = false;
    const { app } = await mount(() => {
      if (!healthy) {
        throw new Error("socket hang up");
      }
      return json(200, makeResponse({ predicted_minutes: 88 }));
    });
    await app.submit();
    const banner = root.querySelector(".banner")!;
    expect(banner.textContent).toContain("socket hang up");

    healthy = true;
    root.querySelector<HTMLButtonElement>(".banner .retry")!.click();
    await vi.waitFor(() => {
      expect(root.querySelector(".minutes")!.textContent).toBe("88 min");
    });
    expect(root.querySelector(".banner")).toBeNull();
  });
});
