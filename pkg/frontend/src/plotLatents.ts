#!/usr/bin/env node
/**
 * plot-latents file -o out.png
 *
 * 2-D scatter of an exported latents.csv, colored by label when the export
 * carries one. Exits nonzero on malformed input or non-2-D latents.
 */

import { readFile } from "node:fs/promises";
import { parseArgs } from "node:util";

import { parseLatentFile } from "./csv";
import { writeImage } from "./render";
import { buildLatentsSvg } from "./svg";

export async function run(argv: string[]): Promise<number> {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      allowPositionals: true,
      options: {
        output: { type: "string", short: "o" },
        help: { type: "boolean", default: false },
      },
    });
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 2;
  }
  if (parsed.values.help) {
    console.log("usage: plot-latents file -o out.png");
    return 0;
  }
  const out = parsed.values.output;
  if (!out) {
    console.error("missing required -o/--output path");
    return 2;
  }
  if (parsed.positionals.length !== 1) {
    console.error("expected exactly one latents.csv file");
    return 2;
  }
  const file = parsed.positionals[0]!;
  let text: string;
  try {
    text = await readFile(file, "utf8");
  } catch (err) {
    console.error(`cannot read ${file}: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
  try {
    await writeImage(buildLatentsSvg(parseLatentFile(text, file)), out);
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 1;
  }
  return 0;
}

if (require.main === module) {
  run(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
