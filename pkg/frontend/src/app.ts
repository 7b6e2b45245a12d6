/** Wiring: schema fetch, event handling, and the submit lifecycle.
 *
 * One request may be in flight at a time; the submit button is disabled
 * while pending. Every submit takes a sequence number, and a response
 * whose number is no longer current is dropped, so a superseded request
 * can never overwrite newer results.
 */

import type { FetchFn, SchemaDoc } from "./api.js";
import { PredictRejection, fetchSchema, postPredict } from "./api.js";
import type { FormState } from "./state.js";
import { buildPayload, initialState, pushResult } from "./state.js";
import { renderApp, renderSchemaError } from "./render.js";

export interface AppOptions {
  baseUrl?: string;
  fetchFn?: FetchFn;
}

export class CalculatorApp {
  private readonly root: HTMLElement;
  private readonly baseUrl: string;
  private readonly fetchFn: FetchFn;
  private schema: SchemaDoc | null = null;
  private state: FormState | null = null;
  private sequence = 0;

  constructor(root: HTMLElement, options: AppOptions = {}) {
    this.root = root;
    this.baseUrl = options.baseUrl ?? "";
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
  }

  async start(): Promise<void> {
    try {
      this.schema = await fetchSchema(this.baseUrl, this.fetchFn);
    } catch (err) {
      this.renderError(`Cannot load the predictor schema: ${String(err)}`);
      return;
    }
    this.state = initialState(this.schema);
    this.render();
  }

  getState(): FormState {
    if (this.state === null) {
      throw new Error("schema not loaded yet");
    }
    return this.state;
  }

  getSchema(): SchemaDoc {
    if (this.schema === null) {
      throw new Error("schema not loaded yet");
    }
    return this.schema;
  }

  setField(name: string, value: string): void {
    const state = this.getState();
    state.fields[name] = { value, unknown: false };
    delete state.messages[name];
    this.render();
  }

  setUnknown(name: string, unknown: boolean): void {
    const state = this.getState();
    const current = state.fields[name] ?? { value: "", unknown: true };
    state.fields[name] = { value: current.value, unknown };
    delete state.messages[name];
    this.render();
  }

  async submit(): Promise<void> {
    const state = this.getState();
    const schema = this.getSchema();
    const { payload, messages } = buildPayload(schema, state);
    state.messages = messages;
    if (Object.keys(messages).length > 0) {
      this.render();
      return;
    }
    const mySequence = ++this.sequence;
    state.pending = true;
    state.banner = null;
    this.render();
    try {
      const response = await postPredict(this.baseUrl, payload, this.fetchFn);
      if (mySequence !== this.sequence) {
        return;
      }
      pushResult(state, mySequence, response);
    } catch (err) {
      if (mySequence !== this.sequence) {
        return;
      }
      if (err instanceof PredictRejection) {
        for (const fieldError of err.errors) {
          state.messages[fieldError.field] = fieldError.message;
        }
      } else {
        state.banner = `Prediction request failed: ${String(err)}`;
      }
    } finally {
      if (mySequence === this.sequence) {
        state.pending = false;
        this.render();
      }
    }
  }

  render(): void {
    if (this.schema === null || this.state === null) {
      return;
    }
    const doc = this.root.ownerDocument;
    const page = renderApp(doc, this.schema, this.state);
    this.bind(page);
    this.root.replaceChildren(page);
  }

  private renderError(message: string): void {
    const doc = this.root.ownerDocument;
    const panel = renderSchemaError(doc, message);
    const retry = panel.querySelector<HTMLButtonElement>(".retry");
    retry?.addEventListener("click", () => {
      void this.start();
    });
    this.root.replaceChildren(panel);
  }

  private bind(page: HTMLElement): void {
    const form = page.querySelector<HTMLFormElement>("form.predictors");
    form?.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit();
    });
    page.addEventListener("change", (event) => {
      const target = event.target as HTMLElement;
      const name = target.dataset.field;
      if (!name) {
        return;
      }
      if (target instanceof HTMLInputElement
          && target.classList.contains("unknown-toggle")) {
        this.setUnknown(name, target.checked);
      } else if (target instanceof HTMLSelectElement) {
        if (target.value === "") {
          this.setUnknown(name, true);
        } else {
          this.setField(name, target.value);
        }
      } else if (target instanceof HTMLInputElement) {
        this.setField(name, target.value);
      }
    });
    const retry = page.querySelector<HTMLButtonElement>(".banner .retry");
    retry?.addEventListener("click", () => {
      void this.submit();
    });
  }
}
