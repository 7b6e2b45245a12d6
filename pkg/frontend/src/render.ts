/** Pure DOM construction: the whole page is a function of schema + state. */

import type { FieldSpec, SchemaDoc } from "./api.js";
import type { FormState, ResultCard } from "./state.js";
import { latestImputed } from "./state.js";

function labelText(name: string): string {
  return name.replace(/_/g, " ");
}

function makeUnknownToggle(doc: Document, spec: FieldSpec,
                           checked: boolean): HTMLElement {
  const wrap = doc.createElement("label");
  wrap.className = "unknown";
  const box = doc.createElement("input");
  box.type = "checkbox";
  box.className = "unknown-toggle";
  box.dataset.affordance = "unknown";
  box.dataset.field = spec.name;
  box.checked = checked;
  wrap.appendChild(box);
  wrap.appendChild(doc.createTextNode(" unknown"));
  return wrap;
}

function makeSelect(doc: Document, spec: FieldSpec, options: string[][],
                    value: string, unknown: boolean): HTMLSelectElement {
  const select = doc.createElement("select");
  select.className = "control";
  select.dataset.field = spec.name;
  const blank = doc.createElement("option");
  blank.value = "";
  blank.textContent = "unknown";
  blank.dataset.affordance = "unknown";
  select.appendChild(blank);
  for (const [optValue, optLabel] of options) {
    const option = doc.createElement("option");
    option.value = optValue;
    option.textContent = optLabel;
    select.appendChild(option);
  }
  select.value = unknown ? "" : value;
  return select;
}

function makeInput(doc: Document, spec: FieldSpec, value: string,
                   unknown: boolean): HTMLInputElement {
  const input = doc.createElement("input");
  input.className = "control";
  input.dataset.field = spec.name;
  input.type = spec.type === "date" ? "date" : "number";
  if (spec.type === "number") {
    input.step = "any";
    if (spec.minimum !== undefined) {
      input.min = String(spec.minimum);
    }
  }
  input.value = value;
  input.disabled = unknown;
  return input;
}

function renderField(doc: Document, spec: FieldSpec, state: FormState,
                     imputed: Set<string>): HTMLElement {
  const field = state.fields[spec.name] ?? { value: "", unknown: true };
  const container = doc.createElement("div");
  container.className = "field";
  container.dataset.field = spec.name;

  const label = doc.createElement("label");
  label.className = "field-label";
  label.textContent = labelText(spec.name);
  container.appendChild(label);

  if (spec.type === "enum") {
    const levels = (spec.levels ?? []).map((level) => [level, level]);
    container.appendChild(
      makeSelect(doc, spec, levels, field.value, field.unknown));
  } else if (spec.type === "boolean") {
    const options = [["yes", "yes"], ["no", "no"]];
    container.appendChild(
      makeSelect(doc, spec, options, field.value, field.unknown));
  } else {
    container.appendChild(makeInput(doc, spec, field.value, field.unknown));
    container.appendChild(makeUnknownToggle(doc, spec, field.unknown));
  }

  if (imputed.has(spec.name)) {
    const badge = doc.createElement("span");
    badge.className = "imputed-badge";
    badge.textContent = "imputed";
    container.appendChild(badge);
  }

  const message = state.messages[spec.name];
  if (message) {
    const note = doc.createElement("span");
    note.className = "message";
    note.textContent = message;
    container.appendChild(note);
  }
  return container;
}

function renderCard(doc: Document, card: ResultCard,
                    position: number): HTMLElement {
  const article = doc.createElement("article");
  article.className = "result-card";
  article.dataset.sequence = String(card.sequence);

  const tag = doc.createElement("p");
  tag.className = "card-tag";
  tag.textContent = position === 0 ? "latest" : "previous";
  article.appendChild(tag);

  const minutes = doc.createElement("p");
  minutes.className = "minutes";
  minutes.textContent = `${Math.round(card.response.predicted_minutes)} min`;
  article.appendChild(minutes);

  const spread = doc.createElement("p");
  spread.className = "spread";
  const sd = card.response.pipeline_spread;
  spread.textContent = `pipeline spread ${sd.toFixed(3)} (log scale)`;
  article.appendChild(spread);

  const imputed = doc.createElement("p");
  imputed.className = "imputed-list";
  imputed.textContent = card.response.imputed_fields.length
    ? `imputed: ${card.response.imputed_fields.join(", ")}`
    : "imputed: none";
  article.appendChild(imputed);

  const version = doc.createElement("p");
  version.className = "model-version";
  version.textContent = `model ${card.response.model_version}`;
  article.appendChild(version);
  return article;
}

export function renderApp(doc: Document, schema: SchemaDoc,
                          state: FormState): HTMLElement {
  const root = doc.createElement("div");
  root.className = "calculator";

  if (state.banner !== null) {
    const banner = doc.createElement("div");
    banner.className = "banner";
    banner.setAttribute("role", "alert");
    banner.appendChild(doc.createTextNode(state.banner + " "));
    const retry = doc.createElement("button");
    retry.type = "button";
    retry.className = "retry";
    retry.textContent = "Retry";
    banner.appendChild(retry);
    root.appendChild(banner);
  }

  const form = doc.createElement("form");
  form.className = "predictors";
  const imputed = latestImputed(state);
  for (const spec of schema.fields) {
    form.appendChild(renderField(doc, spec, state, imputed));
  }
  const submit = doc.createElement("button");
  submit.type = "submit";
  submit.className = "submit";
  submit.textContent = state.pending ? "Predicting" : "Predict";
  submit.disabled = state.pending;
  form.appendChild(submit);
  root.appendChild(form);

  const results = doc.createElement("section");
  results.className = "results";
  state.results.forEach((card, position) => {
    results.appendChild(renderCard(doc, card, position));
  });
  root.appendChild(results);

  const disclaimer = doc.createElement("p");
  disclaimer.className = "disclaimer";
  disclaimer.textContent = "research use only";
  root.appendChild(disclaimer);
  return root;
}

/** Blocking panel shown when the schema itself cannot be fetched. */
export function renderSchemaError(doc: Document, message: string): HTMLElement {
  const panel = doc.createElement("div");
  panel.className = "schema-error";
  panel.setAttribute("role", "alert");
  const text = doc.createElement("p");
  text.textContent = message;
  panel.appendChild(text);
  const retry = doc.createElement("button");
  retry.type = "button";
  retry.className = "retry";
  retry.textContent = "Retry";
  panel.appendChild(retry);
  return panel;
}
